pub mod gradcheck;
pub mod pipeline;
pub mod report;
pub mod server;
