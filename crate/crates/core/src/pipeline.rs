//! Streamed simulations: inputs are drawn and sent through the network one
//! sub-ensemble at a time, so memory stays at one block per worker thread.

use crate::error::Result;
use crate::model::{Block, BlockSource, Ensemble, Ordering, SeededStream, SubEnsembleLayout};
use crate::network::TransmissionMatrix;
use crate::sampler::{draw_block, InputSpec, INPUT_STREAM};

/// Input specification, optional network, layout and seed. Sub-ensemble
/// `r` draws from `SeededStream::new(seed, INPUT_STREAM).substream(r)`.
///
/// Reductions over an `Experiment` see exactly the blocks that
/// [`Experiment::materialize`] would return, in the same order.
#[derive(Clone, Debug)]
pub struct Experiment {
    input: InputSpec,
    network: Option<TransmissionMatrix>,
    layout: SubEnsembleLayout,
    seed: u64,
}

impl Experiment {
    pub fn new(
        input: InputSpec,
        network: Option<TransmissionMatrix>,
        layout: SubEnsembleLayout,
        seed: u64,
    ) -> Result<Self> {
        if let Some(t) = &network {
            t.check_compatible(input.len(), input.ordering())?;
        }
        Ok(Experiment {
            input,
            network,
            layout,
            seed,
        })
    }

    pub fn input(&self) -> &InputSpec {
        &self.input
    }

    pub fn network(&self) -> Option<&TransmissionMatrix> {
        self.network.as_ref()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn block(&self, index: usize) -> Block {
        let stream = SeededStream::new(self.seed, INPUT_STREAM).substream(index as u64);
        let block = draw_block(&self.input, self.layout.chunk(), stream);
        match &self.network {
            Some(t) => t.apply_block(&block, self.input.ordering()),
            None => block,
        }
    }

    /// Collect every output sample into memory.
    pub fn materialize(&self) -> Result<Ensemble> {
        let blocks = self.map_blocks(Block::clone);
        Ensemble::new(blocks, self.input.ordering())
    }
}

impl BlockSource for Experiment {
    fn ordering(&self) -> Ordering {
        self.input.ordering()
    }

    fn modes(&self) -> usize {
        self.input.len()
    }

    fn layout(&self) -> SubEnsembleLayout {
        self.layout
    }

    fn map_blocks<R, F>(&self, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(&Block) -> R + Sync + Send,
    {
        use rayon::prelude::*;
        (0..self.layout.repeats())
            .into_par_iter()
            .map(|r| f(&self.block(r)))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModeSpec;
    use crate::network::{apply, haar_unitary};
    use crate::sampler::draw_input;

    #[test]
    fn streamed_equals_materialized() {
        let input = InputSpec::uniform(ModeSpec::thermal(1.0).unwrap(), 4, Ordering::PositiveP).unwrap();
        let layout = SubEnsembleLayout::new(3, 7).unwrap();
        let t = haar_unitary(4, SeededStream::new(9, 0)).unwrap();
        let exp = Experiment::new(input.clone(), Some(t.clone()), layout, 21).unwrap();
        let stream = SeededStream::new(21, INPUT_STREAM);
        let direct = apply(&t, &draw_input(&input, layout, stream).unwrap()).unwrap();
        assert_eq!(exp.materialize().unwrap(), direct);
    }

    #[test]
    fn mismatched_network_rejected() {
        let input = InputSpec::uniform(ModeSpec::vacuum(), 2, Ordering::Wigner).unwrap();
        let layout = SubEnsembleLayout::new(2, 2).unwrap();
        assert!(Experiment::new(input, Some(TransmissionMatrix::identity(3)), layout, 0).is_err());
    }
}
