"""Frame-by-frame synthesis in video-dubbing and one-shot modes."""

import enum
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .data import (FRAME_PATTERN, FULL_HEAD, LOWER_HALF, Frame, HeadBox, apply_mask, load_features,
                   load_frames, load_head_boxes, read_png, window_audio, write_png)
from .errors import ConfigError, ContractError, MissingInputError
from .network import load_checkpoint, model_forward


class Mode(enum.Enum):
    DUBBING = "dubbing"
    ONESHOT = "oneshot"


@dataclass(frozen=True)
class InferenceJob:
    """Everything needed to synthesize one clip.

    ``features``, ``source_frames`` and ``reference`` accept either paths or
    already-loaded objects (array, list of Frame, Frame). ``head_boxes`` may be
    a path or a list of HeadBox; ``reference_box`` a HeadBox or "t l b r".
    """

    mode: Mode
    checkpoint: object
    features: object
    source_frames: object = None
    head_boxes: object = None
    reference: object = None
    reference_box: object = None
    output_dir: object = None
    comparison: bool = False


def switch_mode(job, source_frames=None, head_boxes=None, reference=None, reference_box=None):
    """Same job and checkpoint, other mode.

    Switching to dubbing needs source frames (from the job or the arguments);
    switching to one-shot defaults the reference to the first source frame.
    """
    if job.mode is Mode.ONESHOT:
        frames = source_frames if source_frames is not None else job.source_frames
        if frames is None:
            raise MissingInputError("dubbing mode needs source frames")
        return replace(job, mode=Mode.DUBBING, source_frames=frames,
                       head_boxes=head_boxes if head_boxes is not None else job.head_boxes)
    ref = reference if reference is not None else job.reference
    box = reference_box if reference_box is not None else job.reference_box
    if ref is None:
        ref, box = _source_frames(job)[0], None
    return replace(job, mode=Mode.ONESHOT, reference=ref, reference_box=box)


def _features(job):
    feats = job.features
    if feats is None:
        raise MissingInputError("job has no features")
    if isinstance(feats, (str, Path)):
        return load_features(feats)
    return np.asarray(feats, dtype=np.float32)


def _source_frames(job):
    src = job.source_frames
    if src is None:
        raise MissingInputError("dubbing mode needs source frames")
    boxes = job.head_boxes
    if isinstance(boxes, (str, Path)):
        boxes = load_head_boxes(boxes)
    if isinstance(src, (str, Path)):
        return load_frames(src, boxes)
    if boxes is not None:
        return [Frame(f.pixels, f.index, b) for f, b in zip(src, boxes)]
    return list(src)


def _reference(job):
    ref = job.reference
    if ref is None:
        raise MissingInputError("one-shot mode needs a reference image")
    if isinstance(ref, (list, tuple)):
        if len(ref) != 1:
            raise ContractError(f"one-shot mode takes exactly one reference image, got {len(ref)}")
        ref = ref[0]
    box = job.reference_box
    if isinstance(box, str):
        box = HeadBox.parse(box)
    if isinstance(ref, (str, Path)):
        return Frame(read_png(ref), 0, box)
    return Frame(ref.pixels, 0, box if box is not None else ref.head_box)


def _model(job, model):
    if model is not None:
        return model
    if job.checkpoint is None:
        raise MissingInputError("job has no checkpoint")
    if isinstance(job.checkpoint, (str, Path)):
        return load_checkpoint(job.checkpoint)
    return job.checkpoint


def frame_inputs(job, features=None):
    """Yield ``(reference, masked, audio_window)`` per output frame."""
    features = _features(job) if features is None else features
    n = len(features)
    if job.mode is Mode.DUBBING:
        src = _source_frames(job)
        if len(src) < n:
            raise ContractError(f"{len(src)} source frames for {n} feature frames")
        for j in range(n):
            yield src[j], apply_mask(src[j], LOWER_HALF), window_audio(features, j)
    else:
        ref = _reference(job)
        masked = apply_mask(ref, FULL_HEAD)
        for j in range(n):
            yield ref, Frame(masked.pixels, j, masked.head_box), window_audio(features, j)


def synthesize(job, model=None):
    """Run the job; returns the output frames and writes them if ``output_dir`` is set.

    Passing ``model`` skips loading ``job.checkpoint``, which lets both modes
    share one in-memory network.
    """
    model = _model(job, model)
    size = model.config.image_size
    outputs, strips = [], []
    for j, (ref, masked, audio) in enumerate(frame_inputs(job)):
        if ref.pixels.shape[1:] != (size, size):
            raise ConfigError(f"frame size {ref.pixels.shape[1:]} does not match checkpoint size {size}")
        out = model_forward(ref, masked, audio, model)
        out = Frame(out.pixels, j, masked.head_box)
        outputs.append(out)
        if job.comparison:
            strips.append(np.concatenate([ref.pixels, masked.pixels, out.pixels], axis=2))
    if job.output_dir is not None:
        write_outputs(job, outputs, strips)
    return outputs


def write_outputs(job, outputs, strips=()):
    d = Path(job.output_dir)
    d.mkdir(parents=True, exist_ok=True)
    for fr in outputs:
        write_png(d / FRAME_PATTERN.format(fr.index), fr.pixels)
    if strips:
        cmp_dir = d / "compare"
        cmp_dir.mkdir(exist_ok=True)
        for j, s in enumerate(strips):
            write_png(cmp_dir / FRAME_PATTERN.format(j), s)
    (d / "manifest.txt").write_text(manifest_text(job, len(outputs)))


def _describe(value):
    if value is None:
        return "-"
    if isinstance(value, (str, Path)):
        return str(value)
    if isinstance(value, HeadBox):
        return " ".join(map(str, value.as_tuple()))
    return "<in-memory>"


def manifest_text(job, n_frames):
    rows = [
        ("mode", job.mode.value),
        ("checkpoint", _describe(job.checkpoint)),
        ("features", _describe(job.features)),
        ("source_frames", _describe(job.source_frames)),
        ("head_boxes", _describe(job.head_boxes)),
        ("reference", _describe(job.reference)),
        ("reference_box", _describe(job.reference_box)),
        ("frames", n_frames),
    ]
    return "".join(f"{k} = {v}\n" for k, v in rows)
