pub mod gradsuite;
pub mod oracles;
