# services/render.py
"""
Debug audio: a sine at the oracle note of each voiced frame.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np
from scipy.io import wavfile

from errors import ConfigurationError

SAMPLE_RATE = 24000
MIDI_OFFSET = 35
AMPLITUDE = 0.3


def note_to_hz(note) -> np.ndarray:
    """Note index n maps to MIDI 35 + n (A4 = MIDI 69 = 440 Hz)."""
    midi = np.asarray(note, dtype=np.float64) + MIDI_OFFSET
    return 440.0 * 2.0 ** ((midi - 69.0) / 12.0)


def synthesize_sine(contour, frame_rate: float, sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    """Phase-continuous sine, silent on unvoiced frames; int16 samples."""
    contour = np.asarray(contour, dtype=np.int64)
    if frame_rate <= 0 or sample_rate <= 0:
        raise ConfigurationError("frame_rate and sample_rate must be positive")
    n = int(round(contour.size * sample_rate / frame_rate))
    frame_of_sample = np.minimum((np.arange(n) * frame_rate / sample_rate).astype(np.int64), contour.size - 1)
    notes = contour[frame_of_sample]
    freq = np.where(notes > 0, note_to_hz(notes), 0.0)
    phase = 2.0 * np.pi * np.cumsum(freq) / sample_rate
    wave = np.where(notes > 0, AMPLITUDE * np.sin(phase), 0.0)
    return np.round(wave * 32767).astype(np.int16)


def render_sine_wav(contour, frame_rate: float, path, sample_rate: int = SAMPLE_RATE) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    wavfile.write(path, sample_rate, synthesize_sine(contour, frame_rate, sample_rate))
    return path
