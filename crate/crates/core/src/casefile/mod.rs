//! Case-file parsing, validation and elaboration.

/// Placeholder while the parser lands.
#[derive(Debug, Clone, Default)]
pub struct CaseFile {}
