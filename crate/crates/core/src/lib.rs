//! Invertible image rescaling that keeps the high-frequency latent.
//!
//! Downscaling and upscaling are one bijective network: a Haar transform
//! followed by affine coupling blocks. The latent `z` that the forward pass
//! emits is normally thrown away and replaced by zeros at upscaling time.
//! Two variants keep part of it instead:
//!
//! * **alpha**: an extra low-branch plane, initialized with the mean of the
//!   detail channels, rides through the blocks and is saved as the alpha
//!   channel of an RGBA PNG.
//! * **meta**: a small convolutional autoencoder squeezes `z` into a
//!   4-channel code that is quantized and stored in a PNG text chunk.
//!
//! Runnable programs in `examples/`:
//!
//! | example | shows |
//! |---|---|
//! | `haar` | sub-band split and exact reconstruction |
//! | `coupling` | invertible coupling stacks at several depths |
//! | `alpha_split` | dropping and rebuilding a detail channel |
//! | `latent_codec` | autoencoder pretraining and the 8-bit code layout |
//! | `autodiff` | tape gradients against finite differences |
//! | `metrics` | bicubic rescaling scored by Y-PSNR and SSIM |
//! | `train_toy` | training any variant on procedural images |
//! | `rescale_alpha` | RGBA artifact files against the zero-latent baseline |
//! | `rescale_meta` | latent code stored in a PNG text chunk |

pub mod cli;
pub mod error;
pub mod eval;
pub mod image;
pub mod imageio;
pub mod invnet;
pub mod latent;
pub mod metrics;
pub mod model;
pub mod synth;
pub mod tensor;
pub mod train;
pub mod wavelet;

pub use error::{Error, Result};
pub use image::PlanarImage;
pub use tensor::{Tape, Tensor, Var};
