//! Cycle-accurate model of a 16-lane soft-SIMT shared memory, comparing
//! banked memories (4, 8 or 16 banks, carry-chain arbitration) against
//! replicated multi-port memories on transpose and FFT kernels.

pub mod kernels;
pub mod mem_arch;
pub mod reference;
pub mod report;
pub mod sim;
pub mod timing;
