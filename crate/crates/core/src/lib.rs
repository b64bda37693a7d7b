pub mod error;
pub mod par;
pub mod spatial;
pub mod uvms;

pub use error::{Error, Result};
pub mod grasp;
pub mod object;
pub mod samples;
pub mod navfun;
pub mod world;
pub mod constraints;
pub mod agent;
pub mod nmpc;
pub mod sim;
pub mod scenario;
pub mod report;
pub mod checks;
