#pragma once

#include "zoomcam/tensor.hpp"
#include "zoomcam/graph.hpp"
#include "zoomcam/saliency.hpp"
#include "zoomcam/aggregation.hpp"
#include "zoomcam/labeling.hpp"
#include "zoomcam/eval.hpp"
#include "zoomcam/io.hpp"
#include "zoomcam/pipeline.hpp"
#include "zoomcam/fixtures.hpp"
