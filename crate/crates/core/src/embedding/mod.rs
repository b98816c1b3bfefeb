//! The Feature Importance Product Space: a t-SNE layout of products by
//! their validated importance vectors, and density forecasts over it.

mod fips;
mod tsne;

pub use fips::{avg_nearest_neighbors, density_scores, distance_matrix, similarity_matrix, tune_sigma, SimilarityMatrix};
pub use tsne::{conditional_affinities, tsne_embed, FipsEmbedding, TsneParams};

use ndarray::{Array2, ArrayView2};

use crate::error::Result;
use crate::scalar::Scalar;

impl<T: Scalar> FipsEmbedding<T> {
    pub fn distances(&self) -> Array2<T> {
        distance_matrix(self.coords.view())
    }

    pub fn avg_nearest_neighbors(&self, sigma: T) -> T {
        avg_nearest_neighbors(&self.distances(), sigma)
    }

    pub fn tune_sigma(&self, target_nn: usize) -> Result<T> {
        tune_sigma(&self.distances(), target_nn)
    }

    /// Density forecast from the competitiveness matrix `m` of the last
    /// observed year.
    pub fn predict(&self, sigma: T, m: ArrayView2<'_, u8>, exclude_self: bool) -> Result<Array2<T>> {
        density_scores(&similarity_matrix(&self.distances(), sigma)?, m, exclude_self)
    }
}
