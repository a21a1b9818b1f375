pub mod corpus;
pub mod checkpoint;
pub mod cli;
pub mod crf;
pub mod encoder;
pub mod heads;
pub mod metrics;
pub mod model;
pub mod seqpack;
pub mod tensor;
pub mod trainer;
