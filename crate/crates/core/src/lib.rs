//! Visual pursuit of a rigid target whose motion is learned with Gaussian
//! processes.

pub mod error;
pub mod geometry;
pub mod gpmodel;
pub mod motion;
pub mod pursuit;
pub mod simulate;
pub mod vision;

pub use error::{PursuitError, Result};
pub use geometry::{ErrorVector, Mat3, Mat6, Pose, Rotation, Twist, Vec3, Vec6};
pub use gpmodel::{Dataset, GpModel, Hyperparameters};
pub use motion::{MotionProfile, SwitchSchedule, SwitchingSignal, Trigger};
pub use vision::FeatureModel;
