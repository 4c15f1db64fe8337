pub mod archive;
pub mod gateway;
pub mod identity;
pub mod orders;
pub mod par;
pub mod plantsim;
pub mod procedure;
pub mod rami;
pub mod registry;
pub mod semantics;
pub mod sovereignty;
pub mod time;
