"""Left-right mirroring of recorded runs."""

import numpy as np

from ..sim.course import mirrored_id
from ..sim.runs import RecordedRun


def mirror_images(images):
    """Flip (..., 6, H, W) stereo images horizontally and swap the eyes."""
    images = np.asarray(images)
    flipped = images[..., ::-1]
    return np.ascontiguousarray(np.concatenate([flipped[..., 3:6, :, :], flipped[..., 0:3, :, :]], axis=-3))


def mirror_run(run):
    """The same drive in the reflected world, registered as a separate course."""
    return RecordedRun(
        mirror_images(run.images),
        -np.asarray(run.steering, np.float32),
        np.array(run.throttle, np.float32),
        mirrored_id(run.course_id),
        run.run_id,
        not run.mirrored,
    )
