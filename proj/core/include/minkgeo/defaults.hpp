#pragma once

#include <array>
#include <cstdint>

// Shipped default configuration values. Every value here can be overridden
// per run through the CLI config file; these are the documented defaults.
namespace minkgeo::defaults {

// Preprocessing (physical intensities in mm/h).
inline constexpr double kDrizzleThreshold = 0.1;   // mm/h; values below are zeroed
inline constexpr double kPixelSize = 2.0;          // km per pixel side

// Persistence filtering.
inline constexpr double kPersistenceEpsilon = 0.05;  // mm/h lifetime threshold
inline constexpr double kInfiniteCutoff = 0.01;      // mm/h; global component counted for u <= cutoff
inline constexpr double kHoleEpsilon = 0.0;          // hole counts are not lifetime-filtered

// Threshold calibration.
inline constexpr std::int64_t kSampleCap = 50'000'000;  // wet-pixel reservoir size
inline constexpr std::array<double, 9> kQuantileLevels = {
    0.01, 0.05, 0.1, 0.25, 0.5, 0.75, 0.9, 0.95, 0.99};

// Mix-up augmentation.
inline constexpr double kMixupAlpha = 0.2;       // Beta(alpha, alpha) concentration
inline constexpr int kInterpFactor = 4;          // block-average / upsample factor

// Analytic relaxation (temperatures in normalized field units).
inline constexpr double kSoftTau = 0.05;
inline constexpr double kSoftTauMask = 0.02;
inline constexpr double kSoftMaskDelta = 0.05;   // mm/h before normalization mapping

// Emulator training.
inline constexpr double kLearningRate = 7.75e-5;
inline constexpr double kWeightDecay = 2.49e-6;
inline constexpr int kBatchSize = 128;
inline constexpr int kMaxEpochs = 50;
inline constexpr int kEarlyStoppingPatience = 15;
inline constexpr double kLossWeightArea = 3.0;
inline constexpr double kLossWeightPerimeter = 1.0;
inline constexpr double kLossWeightComponents = 1.5;

// Trust mechanism: weight decays to this floor at the calibration percentile.
inline constexpr double kTrustFloor = 0.1;
inline constexpr double kTrustPercentile = 0.9;

// Feature inversion.
inline constexpr int kInvertSteps = 200;
inline constexpr double kInvertLearningRate = 0.1;
inline constexpr double kInvertLambdaTv = 1e-5;
inline constexpr double kInvertLambdaL2 = 1e-6;

}  // namespace minkgeo::defaults
