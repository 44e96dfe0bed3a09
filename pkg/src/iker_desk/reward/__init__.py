"""
Keypoint reward evaluation
"""

from .keypoint_reward import (KeypointReward, RewardBreakdown, RewardSpec, RewardSpecError, RewardWeights,
                              check_success, compute_reward, mean_target_distance)
