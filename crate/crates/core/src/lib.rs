pub mod canonical;
pub mod clock;
pub mod datastore;
pub mod evalnorm;
pub mod gateway;
pub mod pipeline;
pub mod prompts;
pub mod text;
pub mod wkt;

pub use clock::Clock;
pub use text::Lang;
