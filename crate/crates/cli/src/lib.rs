pub mod experiments;
pub mod manifest;
pub mod run;
pub mod simulate;
pub mod verify;
