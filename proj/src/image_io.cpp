#include "dabf/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace fs = std::filesystem;

namespace dabf {

void write_ppm(const std::string& path, const Tensor& chw) {
  if (chw.rank() != 3 || chw.dim(0) != 3) {
    throw std::invalid_argument("write_ppm: image must be 3×H×W");
  }
  const int h = chw.dim(1), w = chw.dim(2);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_ppm: cannot open " + path);
  out << "P6\n" << w << " " << h << "\n255\n";
  const auto& d = chw.data();
  std::vector<unsigned char> row(static_cast<size_t>(w) * 3);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        double v = d[(static_cast<size_t>(c) * h + y) * w + x];
        v = std::clamp(v, 0.0, 1.0);
        row[static_cast<size_t>(x) * 3 + c] = static_cast<unsigned char>(std::lround(v * 255.0));
      }
    }
    out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
}

namespace {

int next_ppm_int(std::istream& in) {
  // skips whitespace and '#' comments
  while (true) {
    int c = in.peek();
    if (c == '#') {
      std::string line;
      std::getline(in, line);
    } else if (std::isspace(c)) {
      in.get();
    } else {
      break;
    }
  }
  int v = 0;
  in >> v;
  return v;
}

}  // namespace

Tensor read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_ppm: cannot open " + path);
  std::string magic;
  in >> magic;
  if (magic != "P6") throw std::runtime_error("read_ppm: " + path + " is not a P6 file");
  int w = next_ppm_int(in);
  int h = next_ppm_int(in);
  int maxval = next_ppm_int(in);
  if (maxval != 255) throw std::runtime_error("read_ppm: only maxval 255 supported");
  in.get();  // single whitespace before payload
  std::vector<unsigned char> raw(static_cast<size_t>(w) * h * 3);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!in) throw std::runtime_error("read_ppm: truncated payload in " + path);
  std::vector<double> d(static_cast<size_t>(3) * h * w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        d[(static_cast<size_t>(c) * h + y) * w + x] =
            raw[(static_cast<size_t>(y) * w + x) * 3 + c] / 255.0;
      }
    }
  }
  return Tensor::from(Shape{3, h, w}, std::move(d), false);
}

void write_labels(const std::string& path, const std::vector<GroundTruth>& gts, int image_size) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_labels: cannot open " + path);
  char buf[160];
  for (const GroundTruth& g : gts) {
    std::snprintf(buf, sizeof(buf), "%d %.9f %.9f %.9f %.9f\n", g.class_id,
                  g.box.cx / image_size, g.box.cy / image_size, g.box.w / image_size,
                  g.box.h / image_size);
    out << buf;
  }
}

std::vector<GroundTruth> read_labels(const std::string& path, int image_size) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_labels: cannot open " + path);
  std::vector<GroundTruth> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ls(line);
    GroundTruth g;
    double cx, cy, w, h;
    if (!(ls >> g.class_id >> cx >> cy >> w >> h)) {
      throw std::runtime_error("read_labels: malformed line " + std::to_string(line_no) + " in " + path);
    }
    if (cx < 0.0 || cx >= 1.0 || cy < 0.0 || cy >= 1.0) {
      throw std::runtime_error("read_labels: object center outside image at line " +
                               std::to_string(line_no) + " in " + path);
    }
    g.box = BBox{cx * image_size, cy * image_size, w * image_size, h * image_size};
    out.push_back(g);
  }
  return out;
}

Dataset load_dataset(const std::string& dir) {
  if (!fs::is_directory(dir)) throw std::runtime_error("load_dataset: no such directory: " + dir);
  std::vector<std::string> stems;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.path().extension() == ".ppm") stems.push_back(e.path().stem().string());
  }
  std::sort(stems.begin(), stems.end());
  Dataset ds;
  ds.reserve(stems.size());
  for (const std::string& stem : stems) {
    Sample s;
    s.image = read_ppm((fs::path(dir) / (stem + ".ppm")).string());
    s.gts = read_labels((fs::path(dir) / (stem + ".txt")).string(), s.image.dim(2));
    ds.push_back(std::move(s));
  }
  return ds;
}

}  // namespace dabf
