pub mod bounds;
pub mod consistency;
pub mod copula;
pub mod model;
pub mod oracle;
pub mod random;
pub mod solver;
