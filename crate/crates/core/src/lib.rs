pub mod appearance;
pub mod constraints;
pub mod decomposition;
pub mod eikonal;
pub mod error;
pub mod evolution;
pub mod geodesic;
pub mod io;
pub mod lifted_grid;
pub mod metrics;
pub mod randers;
pub mod raster;
pub mod synthetic;
