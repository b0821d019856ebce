"""Train a small spectral-loss GAN on correlated-random-walk velocities.

Run with ``python demos/crw_gan.py [epochs]``. The default of 20 epochs takes a
couple of minutes on one core; 200 epochs reproduces the desk-scale check in
the acceptance suite.
"""

import sys

import numpy as np

from gazesynth import data, gan, metrics

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 20

# Velocities of a walker whose step lengths are log-normal and whose heading
# drifts by von Mises turns, cut into sequences of 64 samples.
walk = data.CrwParams(mu_log=0.0, sigma_log=0.5, kappa=4.0)
train_set, normalizer = data.crw_dataset(walk, 500, 64, seed=1)
# the held-out walk gets its own normalizer; map it onto the training scale
held_norm, held_normalizer = data.crw_dataset(walk, 200, 64, seed=2)
held_out = normalizer.normalize(held_normalizer.denormalize(held_norm))
print(f"{len(train_set)} training sequences, velocity range {normalizer.min:.3f}..{normalizer.max:.3f}")

config = gan.GanConfig(generator="lstm", discriminator="cnn", seq_len=64, batch_size=32, epochs=epochs)


def progress(record):
    if record.epoch == 1 or record.epoch % 5 == 0:
        print(f"epoch {record.epoch:4d}  L_G {record.l_g:6.3f}  L_D {record.l_d:6.3f}  "
              f"L_spectral {record.l_spectral:8.2f}  D_JS {record.d_js:.4f}")


model, history = gan.train(train_set, config, normalizer, callback=progress)

synthetic = gan.generate(model, 200, seed=7, normalized=True)
report = metrics.evaluation_report(held_out, synthetic)
print(f"held-out D_JS {report.d_js:.4f}, log-spectrum distance {report.spectral_score:.2f}")
row = "mean {mean:.3f} std {std:.3f} skew {skewness:.2f} kurt {kurtosis:.2f}"
print("moments   real:", row.format(**report.real_moments.as_dict()))
print("     synthetic:", row.format(**report.synthetic_moments.as_dict()))
print("ACF lags 1-5 real     ", np.round(report.acf_real[1:6], 3))
print("ACF lags 1-5 synthetic", np.round(report.acf_synthetic[1:6], 3))
