//! Per-client fingerprints carried by the batch-norm scales.
//!
//! Client `i` holds a code `Fᵢ ∈ {−1,+1}^N` and a secret key `Aᵢ ∈ R^{M×N}`
//! where `M` is the number of BN scales. A model carries the fingerprint when
//! `sgn(Aᵢᵀ·W^γ) = Fᵢ` with every response clearing the margin `δ`.

mod codes;
mod score;
mod store;

pub use codes::{
    code_from_str, code_to_string, generate_codes, hamming, min_pairwise_distance, random_codes, Code,
    GaParams,
};
pub use score::{
    extract_code, fss, gen, hd_trace, hinge_loss, linsert, response, trace, trace_model, traceability_rate,
    FingerprintConfig, FingerprintRecord, HdTraceResult, LinsertOutcome, TraceResult,
};
pub use store::{load_records, save_records};
