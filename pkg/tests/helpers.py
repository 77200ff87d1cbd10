"""Fixture builders shared by several test modules."""
import numpy as np

from owarr.signal import RawRecording, save_recording

RATE = 250.0


def envelope(t, phase):
    return 1.0 + 0.8 * np.sin(2 * np.pi * t / 100.0 + phase)


def make_subject(folder, sid, seed, seconds=150.0):
    """Write a toy recording whose channels carry a slowly modulated 5 Hz sine."""
    r = np.random.default_rng(seed)
    t = np.arange(int(seconds * RATE)) / RATE
    env = envelope(t, seed)
    chans = [env * np.sin(2 * np.pi * 5 * t + k) + 0.05 * r.standard_normal(t.size)
             for k in range(3)]
    refs = [0.01 * r.standard_normal(t.size) for _ in range(2)]
    save_recording(RawRecording(np.vstack(chans + refs), RATE,
                                ["c0", "c1", "c2", "A1", "A2"], (3, 4)), folder / f"{sid}.csv")
    times = np.arange(30.0, seconds + 0.1, 5.0)
    with (folder / f"{sid}_rt.csv").open("w") as fh:
        fh.write("time,rt\n")
        for tt in times:
            fh.write(f"{tt},{1 + r.uniform(0, 3)}\n")
    return times
