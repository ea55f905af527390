pub use occ4d_core;
