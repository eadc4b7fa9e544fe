pub mod charts;
pub mod compare;
pub mod evaluate;
pub mod files;
pub mod generate;
pub mod pipeline;
pub mod seeds;
