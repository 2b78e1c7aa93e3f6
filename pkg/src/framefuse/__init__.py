"""framefuse: sequence-length reduction for frame embeddings.

Compresses a ``T x D`` frame-embedding sequence to a target length by
iteratively merging the most cosine-similar adjacent frames, weighting each
merge by per-frame content density (one minus the blank posterior of a CTC
decoder head). Ships with exact CTC loss/gradient routines, brute-force
verification oracles, baseline fusers, long-input chunking, and a
decode-retention benchmark over synthetic datasets.
"""

from .frameio import (
    DatasetManifest,
    FrameSequence,
    SyntheticSpec,
    generate_synthetic,
    load_dataset,
    load_manifest,
    read_fseq,
    write_dataset,
    write_fseq,
)
from .ctc import (
    CtcDecoder,
    TrainingConfig,
    content_density,
    ctc_grad,
    ctc_log_loss,
    decoder_forward,
    enumerate_alignments_oracle,
    greedy_decode,
    init_decoder,
    load_decoder,
    save_decoder,
    train_ctc_decoder,
)
from .fusion import (
    CondensedSequence,
    adjacent_similarity,
    baseline_avgpool,
    baseline_mostsim,
    baseline_random,
    build_schedule,
    group_spans,
    iterative_fusion,
    merge_spans,
    select_pairs,
    single_shot_fusion,
)
from .pipeline import (
    WindowConfig,
    chunk_and_encode,
    compress_to_window,
    dct_batch_plan,
    sample_target_length,
)
from .bench import (
    CostModel,
    edit_distance,
    estimate_cost,
    retention_cer,
    run_grid,
    token_error_rate,
)

__version__ = "0.1.0"
