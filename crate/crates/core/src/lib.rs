pub mod channels;
pub mod error;
pub mod estimator;
pub mod hubbard;
pub mod moments;
pub mod operator;
pub mod overhead;
pub mod protocols;
pub mod random;
pub mod sdp;
pub mod verify;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::{Real, C};

pub type Operator = operator::Operator<f64>;
pub type Operator32 = operator::Operator<f32>;
pub type Channel = channels::Channel<f64>;
pub type Channel32 = channels::Channel<f32>;
