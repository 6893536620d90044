pub mod cantor;
pub mod diffop;
pub mod error;
pub mod integrand;
pub mod linalg;
pub mod energy;
pub mod resolvent;
pub mod flow;
pub mod scenario;
pub mod trace_io;
