// zoomcam command-line front end.
//
// Exit codes: 0 success, 1 usage error, 2 data error.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "zoomcam/zoomcam.hpp"

namespace fs = std::filesystem;
using namespace zoomcam;

namespace {

constexpr int kUsageError = 1;
constexpr int kDataError = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::vector<std::size_t> parse_class_list(const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty() || item.find_first_not_of("0123456789") != std::string::npos)
      throw UsageError("bad class list '" + s + "'");
    out.push_back(std::stoul(item));
  }
  if (out.empty()) throw UsageError("empty class list");
  return out;
}

Connectivity parse_connectivity(int c) {
  if (c == 4) return Connectivity::Four;
  if (c == 8) return Connectivity::Eight;
  throw UsageError("connectivity must be 4 or 8");
}

void check_tau(double tau) {
  if (!(tau > 0.0 && tau < 1.0)) throw UsageError("--tau must lie in (0, 1)");
}

ExplainOptions parse_explain(const std::string& method, const std::string& layers) {
  ExplainOptions opts;
  try {
    opts.method = parse_method(method);
    if (!layers.empty())
      opts.layers = parse_layer_policy(layers);
    else
      opts.layers = opts.method == Method::ZoomCam ? LayerPolicy{AllLayers{}}
                                                   : LayerPolicy{LastK{1}};
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
  return opts;
}

std::vector<fs::path> files_with_extension(const fs::path& dir, const std::string& ext) {
  if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ext) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

void write_text(const std::optional<std::string>& out, const std::string& text) {
  if (!out) {
    std::cout << text;
    return;
  }
  std::ofstream f(*out, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + *out);
  f << text;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Class-discriminative saliency maps and pseudo-labels"};
  app.require_subcommand(1);

  // visualize
  std::string model_path, image_path, out_path, method = "zoomcam", layers;
  std::size_t class_idx = 0;
  auto* visualize = app.add_subcommand("visualize", "Write a normalized saliency map");
  visualize->add_option("--model", model_path, "Model JSON")->required();
  visualize->add_option("--image", image_path, "Input tensor (ZCT1)")->required();
  visualize->add_option("--class", class_idx, "Class index")->required();
  visualize->add_option("--method", method, "cam | gradcam | zoomcam");
  visualize->add_option("--layers", layers, "all | lastK=<k> | names=a,b");
  visualize->add_option("--out", out_path, "Output map (ZCT1)")->required();

  // bbox
  std::string map_path;
  std::optional<std::string> box_out;
  double tau = 0.25;
  int connectivity = 8;
  auto* bbox = app.add_subcommand("bbox", "Box around the largest thresholded region");
  bbox->add_option("--map", map_path, "Saliency map (ZCT1)")->required();
  bbox->add_option("--tau", tau, "Relative threshold");
  bbox->add_option("--connectivity", connectivity, "4 or 8");
  bbox->add_option("--out", box_out, "Box text file (stdout if omitted)");

  // pseudo-seg
  std::string classes_arg;
  auto* pseudo = app.add_subcommand("pseudo-seg", "Fuse per-class maps into a label map");
  pseudo->add_option("--model", model_path, "Model JSON")->required();
  pseudo->add_option("--image", image_path, "Input tensor (ZCT1)")->required();
  pseudo->add_option("--classes", classes_arg, "Comma-separated class ids")->required();
  pseudo->add_option("--tau", tau, "Relative threshold");
  pseudo->add_option("--method", method, "cam | gradcam | zoomcam");
  pseudo->add_option("--layers", layers, "all | lastK=<k> | names=a,b");
  pseudo->add_option("--out", out_path, "Output label map (ZCT1)")->required();

  // eval-loc
  std::string records_dir;
  std::size_t k = 1;
  auto* eval_loc = app.add_subcommand("eval-loc", "Top-k localization error");
  eval_loc->add_option("--records", records_dir, "Directory of *.json records")->required();
  eval_loc->add_option("--k", k, "Ranking depth");

  // eval-seg
  std::string pred_dir, gt_dir;
  std::size_t class_count = 0;
  auto* eval_seg = app.add_subcommand("eval-seg", "Per-class IoU and mIoU");
  eval_seg->add_option("--pred", pred_dir, "Predicted label maps")->required();
  eval_seg->add_option("--gt", gt_dir, "Ground-truth label maps")->required();
  eval_seg->add_option("--classes", class_count, "Foreground class count")->required();

  // gradcheck
  std::uint64_t seed = 0;
  std::string check_layer = "all";
  double step = 1e-5;
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient check");
  gradcheck->add_option("--model", model_path, "Model JSON")->required();
  gradcheck->add_option("--seed", seed, "Seed of the random input")->required();
  gradcheck->add_option("--class", class_idx, "Class index");
  gradcheck->add_option("--layer", check_layer, "Layer name or all");
  gradcheck->add_option("--step", step, "Perturbation size");

  // fixture-gen
  std::string scenario, fixture_dir;
  auto* fixture = app.add_subcommand("fixture-gen", "Write a synthetic fixture");
  fixture->add_option("--scenario", scenario, "small-object | two-instance | gap-head")
      ->required();
  fixture->add_option("--seed", seed, "Seed")->required();
  fixture->add_option("--out", fixture_dir, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "zoomcam: " << e.what() << "\n";
    return kUsageError;
  }

  try {
    if (*visualize) {
      const ExplainOptions opts = parse_explain(method, layers);
      const ModelGraph model = load_model(model_path);
      const Tensor image = load_tensor(image_path);
      save_map(out_path, explain(model, image, class_idx, opts));
    } else if (*bbox) {
      check_tau(tau);
      const Connectivity conn = parse_connectivity(connectivity);
      write_text(box_out, format_box(localize(load_map(map_path), tau, conn)));
    } else if (*pseudo) {
      check_tau(tau);
      const ExplainOptions opts = parse_explain(method, layers);
      const auto classes = parse_class_list(classes_arg);
      const ModelGraph model = load_model(model_path);
      const Tensor image = load_tensor(image_path);
      save_segmap(out_path, pseudo_segment(model, image, classes, tau, opts));
    } else if (*eval_loc) {
      if (k == 0) throw UsageError("--k must be at least 1");
      std::vector<LocRecord> records;
      for (const auto& p : files_with_extension(records_dir, ".json")) {
        try {
          records.push_back(loc_record_from_json(read_bytes(p)));
        } catch (const FormatError& e) {
          throw FormatError(p.filename().string() + ": " + e.what());
        }
      }
      std::cout << "top" << k << "_loc_error "
                << format_number(topk_localization_error(records, k)) << "\n";
    } else if (*eval_seg) {
      std::vector<SegRecord> records;
      for (const auto& p : files_with_extension(pred_dir, ".zct")) {
        const fs::path gt = fs::path(gt_dir) / p.filename();
        if (!fs::exists(gt)) throw IoError("no ground truth for " + p.filename().string());
        records.push_back({load_segmap(p), load_segmap(gt)});
      }
      const SegCounts counts = segmentation_counts(records, class_count);
      for (std::size_t c = 0; c <= class_count; ++c) {
        const auto v = counts.iou(c);
        std::cout << "class " << c << " iou " << (v ? format_number(*v) : "absent")
                  << "\n";
      }
      std::cout << "miou " << format_number(miou(records, class_count)) << "\n";
    } else if (*gradcheck) {
      if (!(step > 0.0)) throw UsageError("--step must be positive");
      const ModelGraph model = load_model(model_path);
      const Tensor input = random_input(model, seed);
      std::vector<std::string> names;
      if (check_layer == "all") {
        for (const auto& l : model.layers()) names.push_back(l.name);
      } else {
        names.push_back(check_layer);
      }
      GradCheckReport total;
      for (const auto& n : names) {
        const auto r = grad_check(model, input, class_idx, n, step);
        total.max_relative_error = std::max(total.max_relative_error, r.max_relative_error);
        total.checked += r.checked;
        total.skipped_kinks += r.skipped_kinks;
      }
      std::cout << "max_rel_error " << format_number(total.max_relative_error) << "\n"
                << "checked " << total.checked << "\n"
                << "skipped_kinks " << total.skipped_kinks << "\n";
    } else if (*fixture) {
      if (scenario != "small-object" && scenario != "two-instance" && scenario != "gap-head")
        throw UsageError("unknown scenario '" + scenario + "'");
      write_fixture(make_fixture(scenario, seed), fixture_dir);
    }
  } catch (const UsageError& e) {
    std::cerr << "zoomcam: " << e.what() << "\n";
    return kUsageError;
  } catch (const std::exception& e) {
    std::cerr << "zoomcam: " << e.what() << "\n";
    return kDataError;
  }
  return 0;
}
