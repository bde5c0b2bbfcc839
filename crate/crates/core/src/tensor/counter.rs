use std::collections::BTreeMap;

/// Multiply-accumulate tally. Only matmuls and convolutions report into it;
/// elementwise ops, softmax and normalisation are free.
///
/// Counts are attributed to the current scope (a layer name such as
/// `block3.mhsa`) when one is set, otherwise to the primitive's own tag.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MacCounter {
    total: u64,
    per_tag: BTreeMap<String, u64>,
    scope: Option<String>,
}

impl MacCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, op: &str, macs: u64) {
        self.total += macs;
        let key = self.scope.as_deref().unwrap_or(op);
        *self.per_tag.entry(key.to_string()).or_default() += macs;
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn per_tag(&self) -> &BTreeMap<String, u64> {
        &self.per_tag
    }

    pub fn get(&self, tag: &str) -> u64 {
        self.per_tag.get(tag).copied().unwrap_or(0)
    }

    pub fn set_scope(&mut self, scope: impl Into<String>) {
        self.scope = Some(scope.into());
    }

    pub fn clear_scope(&mut self) {
        self.scope = None;
    }

    pub fn reset(&mut self) {
        self.total = 0;
        self.per_tag.clear();
        self.scope = None;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn total_is_sum_of_tags() {
        let mut c = MacCounter::new();
        c.add("matmul", 10);
        c.set_scope("block0.ffn1");
        c.add("matmul", 5);
        c.add("conv2d", 7);
        c.clear_scope();
        c.add("conv2d", 1);
        assert_eq!(c.total(), 23);
        assert_eq!(c.per_tag().values().sum::<u64>(), c.total());
        assert_eq!(c.get("block0.ffn1"), 12);
        assert_eq!(c.get("matmul"), 10);
        c.reset();
        assert_eq!(c.total(), 0);
        assert!(c.per_tag().is_empty());
    }
}
