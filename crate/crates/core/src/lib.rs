//! Reference implementation of integer-rescaled decode attention: FP32 bit
//! tricks, a BF16 tensor simulator, the attention kernels, the Cube/Vector
//! preload scheduler, and a roofline performance model.

pub mod attention;
pub mod error;
pub mod fp_bits;
pub mod perf;
pub mod schedule;
pub mod tensor;

pub use attention::{
    amla_attention, base_attention, golden_attention, AmlaDiagnostics, AmlaOptions,
    AttentionConfig, Compensation, DistributionSpec,
};
pub use error::{Error, Result};
pub use fp_bits::{Bf16, Fp32Bits};
pub use tensor::{matmul_fp32, matmul_mixed, rel_frobenius_error, Matrix, Precision};
