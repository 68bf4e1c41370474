//! The robot-program DSL: parsing, interpretation into sampled trajectories,
//! and the trajectory interchange format.

mod interpret;
mod parse;
mod trace;

pub use interpret::{interpret, proximity, InterpretError, InterpreterConfig, UR_CLASS_HOME};
pub use parse::{parse_program, Instruction, Op, ParseError, RobotProgram, API};
pub use trace::{Leg, RobotState, TraceError, Trajectory};
