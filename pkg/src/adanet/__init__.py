"""Unpaired image-to-image domain adaptation for multispectral aerial tiles.

The package implements an attention-guided generator trained with spatial and
frequency-domain contrastive losses, the CUT/FastCUT/Cycle-GAN baselines, a
synthetic two-domain benchmark and a zero-shot segmentation evaluation
harness.
"""

from .data import (
    ChannelStats,
    Domain,
    ImageTile,
    Scene,
    SegMask,
    UnpairedDataset,
    denormalize,
    extract_tiles,
    make_unpaired_dataset,
    normalize,
)
from .generator import GeneratorConfig, TranslationGenerator
from .discriminators import DiscriminatorConfig, build_discriminator, discriminator_loss
from .contrastive import (
    ContrastiveTriplet,
    FrequencyConfig,
    ProjectionHeads,
    dft_patch,
    frequency_contrastive_loss,
    identity_frequency_loss,
    identity_spatial_loss,
    info_nce,
    sample_pixel_features,
    spatial_contrastive_loss,
)
from .training import (
    ContrastiveTrainer,
    LossWeights,
    TrainConfig,
    build_contrastive_trainer,
    generator_adversarial_loss,
    total_generator_loss,
)
from .baselines import (
    CycleGANPair,
    CycleGANTrainer,
    build_cyclegan_trainer,
    build_trainer,
    cut_loss,
    cyclegan_generator_loss,
    fastcut_loss,
    make_cyclegan_pair,
)
from .segmentation import (
    ConfusionCounts,
    MetricReport,
    SegmenterHandle,
    confusion,
    metrics,
    train_reference_segmenter,
    zero_shot_evaluate,
)
from .synthetic import (
    PhotometricShift,
    SynthParams,
    SynthScenePair,
    domain_gap_statistic,
    generate_pair,
    write_benchmark_dataset,
)

__version__ = "0.1.0"
