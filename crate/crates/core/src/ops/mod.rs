//! Forward and backward kernels on plain tensors.
//!
//! Every kernel is a pure function of its inputs. Reductions run in a fixed
//! order, so results are bitwise reproducible from run to run.

pub mod conv;
pub mod pointwise;
pub mod pool;
pub mod resize;

pub use conv::{conv2d, conv2d_backward, ConvGrads};
pub use pointwise::*;
pub use pool::*;
pub use resize::*;

use crate::error::{Error, Result};
use crate::tensor::Shape;

pub(crate) fn same_shape(op: &'static str, a: Shape, b: Shape) -> Result<()> {
    if a != b {
        return Err(Error::ShapeMismatch { op, lhs: a, rhs: b });
    }
    Ok(())
}
