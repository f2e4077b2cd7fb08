# Motion space walkthrough: keypoints from canonical points, expression offsets and head pose.
# Run: python3 demos/01_motion_space.py

# %%
import numpy as np

from motionlatent.motion_space import (MotionFrame, apply_motion, depose, euler_to_rotation, latent_transfer_consistency,
                                       rotation_to_euler, transfer_expression, transfer_pose)

rng = np.random.default_rng(0)
K = 21

# %% A frame is canonical keypoints + per-keypoint expression offsets + (yaw, pitch, roll, t, scale)
canonical = rng.standard_normal((K, 3))
source = MotionFrame.from_pose(canonical, 0.05 * rng.standard_normal((K, 3)), [0.3, -0.1, 0.05, 0.1, 0.0, 0.2, 1.1])
driver = MotionFrame.from_pose(rng.standard_normal((K, 3)), 0.05 * rng.standard_normal((K, 3)),
                               [-0.4, 0.2, 0.0, 0.0, 0.1, 0.0, 0.9])
kp = apply_motion(source)
print("keypoints", kp.shape)

# angles round-trip through the rotation matrix away from |yaw| = 90 degrees
R = euler_to_rotation(0.3, -0.1, 0.05)
print("angles back", np.round(rotation_to_euler(R), 12))

# %% Transfers swap one factor and keep the rest of the target
posed = transfer_pose(source, driver)          # source identity/expression, driver head pose
expressive = transfer_expression(source, driver)  # source pose, driver expression
print("pose transfer moves keypoints by", float(np.abs(posed - kp).max()))
print("expression transfer moves keypoints by", float(np.abs(expressive - kp).max()))

# self-transfer leaves the frame untouched, exactly
assert np.array_equal(transfer_pose(source, source), kp)
assert np.array_equal(transfer_expression(source, source), kp)
print("self-transfer consistency", latent_transfer_consistency(source, source))

# %% Removing the rigid part leaves canonical points plus the expression offsets seen in the head frame
recovered = depose(kp, source)
print("depose error", float(np.abs(recovered - (canonical + source.expression @ source.rotation.T)).max()))
