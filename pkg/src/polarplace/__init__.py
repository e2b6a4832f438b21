"""Rotation-invariant LiDAR place signatures and FFT yaw estimation on polar BEV grids."""

from .pointcloud import PointCloud, FilterConfig, load_point_cloud, filter_points, rotate_point_cloud
from .bev import BevConfig, BevVariant, PolarBev, build_polar_bev, rotate_polar_bev, channel_pool
from .features import FeatureParams, ConvLayer, init_params, feature_forward, feature_backward
from .spectrum import CropConfig, fft2_per_channel, magnitude_signature, signature_distance
from .correlate import (YawEstimate, CorrelationDistribution, brute_force_yaw, cross_power,
                        correlation_1d, softmax_expectation_yaw, softmax_expectation_backward,
                        estimate_yaw)
from .learn import (TrainingTuple, LossConfig, quadruplet_loss, rotation_loss, joint_loss,
                    n_way_augment, train)
from .retrieve import PlaceRecord, PlaceDatabase, RetrievalResult, EvalReport, evaluate_retrieval, unseen_place_score
from .synth import World, ScanSpec, generate_world, simulate_scan, generate_benchmark
from .pipeline import ScanEncoder, EncodedScan

__version__ = "0.1.0"
