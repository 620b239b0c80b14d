pub mod quad;
pub mod special;
