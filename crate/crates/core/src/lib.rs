pub mod harness;
pub mod llm;
pub mod miner;
pub mod model;
pub mod obs;
pub mod radrscore;
pub mod rewards;
pub mod trainkit;
