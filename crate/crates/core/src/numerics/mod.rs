pub mod banded;
pub mod grid;
pub mod interp;
pub mod ode;
pub mod quad;
pub mod roots;
pub mod smooth;
