#pragma once

#include "gesturelab/error.hpp"
#include "gesturelab/linalg.hpp"
#include "gesturelab/random.hpp"
#include "gesturelab/parallel.hpp"
#include "gesturelab/tracking_features.hpp"
#include "gesturelab/image.hpp"
#include "gesturelab/image_pipeline.hpp"
#include "gesturelab/fusion.hpp"
#include "gesturelab/pca.hpp"
#include "gesturelab/svm.hpp"
#include "gesturelab/multiclass.hpp"
#include "gesturelab/dataset.hpp"
#include "gesturelab/harness.hpp"
