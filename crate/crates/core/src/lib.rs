pub mod addr;
pub mod analysis;
pub mod flows;
pub mod oui;
pub mod pipeline;
pub mod simgen;
pub mod tracker;
pub mod verify;
