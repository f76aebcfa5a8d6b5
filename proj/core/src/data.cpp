#include "featxlate/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <map>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <set>

#include "featxlate/error.hpp"

namespace featxlate {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

std::size_t edit_distance(const std::string& a, const std::string& b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

torch::Tensor mat_to_tensor(const cv::Mat& bgr) {
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  auto t = torch::from_blob(rgb.data, {rgb.rows, rgb.cols, 3}, torch::kUInt8).clone();
  return t.permute({2, 0, 1}).to(torch::kFloat32).div_(255.0f).contiguous();
}

}  // namespace

bool is_image_path(const fs::path& path) {
  static const std::set<std::string> kExt = {".png", ".jpg", ".jpeg", ".bmp"};
  return kExt.count(lower(path.extension().string())) != 0;
}

DomainDataset build_folder_domain(const fs::path& root, const std::string& domain_id) {
  if (!fs::is_directory(root)) {
    throw NotFoundError("domain folder not found: " + root.string());
  }
  DomainDataset ds;
  ds.domain_id = domain_id;
  for (const auto& entry : fs::recursive_directory_iterator(root)) {
    if (!entry.is_regular_file()) continue;
    if (!is_image_path(entry.path())) {
      ++ds.ignored_files;
      continue;
    }
    ds.items.push_back({fs::relative(entry.path(), root).generic_string(), entry.path()});
  }
  std::sort(ds.items.begin(), ds.items.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  if (ds.ignored_files > 0) {
    std::cerr << "[data] domain '" << domain_id << "': ignored " << ds.ignored_files << " non-image file(s)\n";
  }
  if (ds.items.empty()) {
    throw Error("domain '" + domain_id + "' has no images under " + root.string());
  }
  return ds;
}

DomainDataset build_coco_domain(const CocoFilter& filter, const fs::path& images_root, const std::string& domain_id) {
  std::ifstream in(filter.annotation_file);
  if (!in) throw NotFoundError("COCO annotation file not found: " + filter.annotation_file.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw IoError("cannot parse COCO annotations " + filter.annotation_file.string() + ": " + e.what());
  }

  std::vector<std::int64_t> matches;
  std::vector<std::string> names;
  for (const auto& cat : doc.at("categories")) {
    auto name = cat.at("name").get<std::string>();
    names.push_back(name);
    if (name == filter.category) matches.push_back(cat.at("id").get<std::int64_t>());
  }
  if (matches.size() != 1) {
    std::string near;
    for (const auto& n : names) {
      auto a = lower(n), b = lower(filter.category);
      if (a.find(b) != std::string::npos || b.find(a) != std::string::npos || edit_distance(a, b) <= 2) {
        near += (near.empty() ? "" : ", ") + n;
      }
    }
    throw ConfigError("COCO category '" + filter.category + "' " +
                      (matches.empty() ? "not found" : "is ambiguous") +
                      (near.empty() ? std::string(" (no near matches)") : "; near matches: " + near));
  }
  const auto category_id = matches.front();

  struct ImageInfo {
    std::string file_name;
    double area = 0.0;
  };
  std::map<std::int64_t, ImageInfo> images;
  for (const auto& img : doc.at("images")) {
    ImageInfo info;
    info.file_name = img.at("file_name").get<std::string>();
    info.area = img.value("width", 0.0) * img.value("height", 0.0);
    images[img.at("id").get<std::int64_t>()] = info;
  }

  std::set<std::int64_t> selected;
  for (const auto& ann : doc.at("annotations")) {
    if (ann.at("category_id").get<std::int64_t>() != category_id) continue;
    auto image_id = ann.at("image_id").get<std::int64_t>();
    auto it = images.find(image_id);
    if (it == images.end()) continue;
    if (filter.min_area_fraction > 0.0) {
      if (it->second.area <= 0.0) continue;
      if (ann.value("area", 0.0) / it->second.area < filter.min_area_fraction) continue;
    }
    selected.insert(image_id);
  }

  DomainDataset ds;
  ds.domain_id = domain_id;
  for (auto id : selected) {
    const auto& info = images.at(id);
    ds.items.push_back({info.file_name, images_root / info.file_name});
  }
  if (ds.items.empty()) {
    throw Error("COCO domain '" + domain_id + "': no images contain category '" + filter.category + "'");
  }
  return ds;
}

torch::Tensor load_image(const fs::path& path) {
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) {
    throw IoError("cannot decode image: " + path.string());
  }
  return mat_to_tensor(bgr);
}

std::int64_t train_resize_side(std::int64_t crop_side) { return (crop_side * 256 + 112) / 224; }

torch::Tensor augment(const torch::Tensor& image, AugmentPolicy policy, std::mt19937_64& rng, std::int64_t side) {
  const auto h = image.size(1), w = image.size(2);
  const auto target = policy == AugmentPolicy::train ? train_resize_side(side) : side;
  const double scale = static_cast<double>(target) / static_cast<double>(std::min(h, w));
  auto nh = std::max<std::int64_t>(target, std::llround(h * scale));
  auto nw = std::max<std::int64_t>(target, std::llround(w * scale));
  if (h < w) nh = target;
  else nw = target;

  auto hwc = image.permute({1, 2, 0}).contiguous();
  cv::Mat src(static_cast<int>(h), static_cast<int>(w), CV_32FC3, hwc.data_ptr<float>());
  cv::Mat resized;
  if (nh == h && nw == w) {
    resized = src.clone();
  } else {
    const int interp = scale < 1.0 ? cv::INTER_AREA : cv::INTER_LINEAR;
    cv::resize(src, resized, cv::Size(static_cast<int>(nw), static_cast<int>(nh)), 0, 0, interp);
  }

  std::int64_t top, left;
  bool mirror = false;
  if (policy == AugmentPolicy::train) {
    top = static_cast<std::int64_t>(rng() % static_cast<std::uint64_t>(nh - side + 1));
    left = static_cast<std::int64_t>(rng() % static_cast<std::uint64_t>(nw - side + 1));
    mirror = (rng() >> 63) != 0;
  } else {
    top = (nh - side) / 2;
    left = (nw - side) / 2;
  }
  cv::Mat crop = resized(cv::Rect(static_cast<int>(left), static_cast<int>(top), static_cast<int>(side),
                                  static_cast<int>(side)))
                     .clone();
  if (mirror) cv::flip(crop, crop, 1);
  auto out = torch::from_blob(crop.data, {side, side, 3}, torch::kFloat32).clone();
  return out.permute({2, 0, 1}).clamp(0.0, 1.0).contiguous();
}

torch::Tensor load_and_augment(const DomainItem& item, AugmentPolicy policy, std::mt19937_64& rng, std::int64_t side) {
  return augment(load_image(item.path), policy, rng, side);
}

std::uint64_t item_seed(std::uint64_t stage_seed, const std::string& item_id) {
  std::uint64_t h = 1469598103934665603ull ^ stage_seed;
  for (unsigned char c : item_id) {
    h ^= c;
    h *= 1099511628211ull;
  }
  // splitmix64 finaliser
  h += 0x9e3779b97f4a7c15ull;
  h = (h ^ (h >> 30)) * 0xbf58476d1ce4e5b9ull;
  h = (h ^ (h >> 27)) * 0x94d049bb133111ebull;
  return h ^ (h >> 31);
}

torch::Tensor to_uint8_image(const torch::Tensor& image) {
  auto scaled = (image.detach().to(torch::kFloat64).clamp(-1.0, 1.0) + 1.0) * 127.5;
  // torch::round is round-half-to-even.
  return torch::round(scaled).clamp(0, 255).to(torch::kUInt8).contiguous();
}

void write_image(const fs::path& path, const torch::Tensor& rgb_u8) {
  if (rgb_u8.dim() != 3 || rgb_u8.size(0) != 3 || rgb_u8.scalar_type() != torch::kUInt8) {
    throw ShapeError("write_image expects a (3,H,W) uint8 tensor");
  }
  auto hwc = rgb_u8.permute({1, 2, 0}).contiguous();
  cv::Mat rgb(static_cast<int>(hwc.size(0)), static_cast<int>(hwc.size(1)), CV_8UC3, hwc.data_ptr<std::uint8_t>());
  cv::Mat bgr;
  cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), bgr)) {
    throw IoError("cannot write image: " + path.string());
  }
}

}  // namespace featxlate
