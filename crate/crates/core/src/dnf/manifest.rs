use serde::{Deserialize, Serialize};

/// Binds one flattened atom slot to the yes/no question that produces it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredicateBinding {
    pub predicate_id: String,
    pub atom_id: String,
    /// May reference `{env}`, `{chapter}` and `{candidate}`.
    pub question_template: String,
}

/// Ordered list of bindings; position in the list is the atom index.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PredicateManifest(pub Vec<PredicateBinding>);

impl PredicateManifest {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn atom_index(&self, atom_id: &str) -> Option<usize> {
        self.0.iter().position(|b| b.atom_id == atom_id)
    }

    /// Number of distinct predicates; atoms of one predicate share an id.
    pub fn n_predicates(&self) -> usize {
        let mut ids: Vec<&str> = self.0.iter().map(|b| b.predicate_id.as_str()).collect();
        ids.sort_unstable();
        ids.dedup();
        ids.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = &PredicateBinding> {
        self.0.iter()
    }
}
