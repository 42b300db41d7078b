pub mod algebra;
pub mod budget;
pub mod eval;
pub mod mechanisms;
pub mod rewrite;
pub mod sensitivity;
pub mod service;
pub mod sql;
