from .sections import (
    END_FRAMES, LEFT, PEAK_THRESHOLD, RIGHT, STRAIGHT, TEST_BUFFER, TRAIN_BUFFER, TURN_THRESHOLD, WINDOW,
    Section, SectionLayout, normalize_steering, split_sections,
)
from .pairs import (
    DatasetSplit, MIN_NEGATIVE_FRAMES, MIN_PAIR_FRAMES, NEAR_NEGATIVE, NEGATIVE, POSITIVE, PairStoreError, TrainingPair,
    generate_pairs, load_pairs, make_batches, save_pairs, split_train_val,
)
from .augment import mirror_images, mirror_run
