use crate::signal::{span_label, EventInterval};

/// Stand-in for the expert: answers label queries from the reference
/// annotations and counts every query.
#[derive(Debug, Clone)]
pub struct AnnotationOracle {
    reference: Vec<EventInterval>,
    overlap_fraction: f64,
    /// Queries made during initial adaptation (not charged as labeling cost).
    pub stage0_queries: usize,
    /// Window indices queried after initial adaptation, in query order.
    pub queried: Vec<usize>,
}

impl AnnotationOracle {
    pub fn new(reference: Vec<EventInterval>, overlap_fraction: f64) -> Self {
        Self { reference, overlap_fraction, stage0_queries: 0, queried: Vec::new() }
    }

    pub fn reference(&self) -> &[EventInterval] {
        &self.reference
    }

    /// Label for a window span, without counting a query.
    pub fn peek(&self, span: &EventInterval) -> u8 {
        span_label(span, &self.reference, self.overlap_fraction)
    }

    pub(crate) fn label_stage0(&mut self, span: &EventInterval) -> u8 {
        self.stage0_queries += 1;
        self.peek(span)
    }

    pub(crate) fn label(&mut self, index: usize, span: &EventInterval) -> u8 {
        self.queried.push(index);
        self.peek(span)
    }

    pub fn total_queries(&self) -> usize {
        self.stage0_queries + self.queried.len()
    }
}
