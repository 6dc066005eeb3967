pub mod bracket;
pub mod evaluate;
pub mod gradcheck;
pub mod solve;
pub mod sweep;
