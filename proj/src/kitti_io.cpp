#include "boxlift/kitti_io.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace boxlift {

namespace {

std::vector<double> parse_numbers(const std::string& s) {
  std::vector<double> out;
  std::istringstream in(s);
  double v;
  while (in >> v) out.push_back(v);
  return out;
}

std::string format_row(const KittiLabelRow& r) {
  char buf[512];
  int n = std::snprintf(buf, sizeof(buf),
                        "%s %.6f %d %.6f %.6f %.6f %.6f %.6f %.6f %.6f %.6f %.6f %.6f %.6f %.6f",
                        r.type.c_str(), r.truncated, r.occluded, r.alpha, r.bbox.x_min,
                        r.bbox.y_min, r.bbox.x_max, r.bbox.y_max, r.height, r.width, r.length, r.x,
                        r.y, r.z, r.rotation_y);
  std::string line(buf, n);
  if (r.score) {
    n = std::snprintf(buf, sizeof(buf), " %.6f", *r.score);
    line.append(buf, n);
  }
  return line;
}

}  // namespace

PointCloud read_velodyne_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoFailure("cannot open velodyne file " + path.string());
  in.seekg(0, std::ios::end);
  const std::streamoff size = in.tellg();
  in.seekg(0, std::ios::beg);
  if (size % 16 != 0) {
    throw TruncatedBinary(path.string() + ": size " + std::to_string(size) +
                          " bytes is not a multiple of 16 (truncated at byte " +
                          std::to_string(size - size % 16) + ")");
  }
  std::vector<float> raw(static_cast<std::size_t>(size) / 4);
  if (size > 0 && !in.read(reinterpret_cast<char*>(raw.data()), size)) {
    throw IoFailure("short read on " + path.string());
  }
  PointCloud cloud;
  cloud.reserve(raw.size() / 4);
  for (std::size_t i = 0; i + 3 < raw.size(); i += 4) {
    cloud.push_back({raw[i], raw[i + 1], raw[i + 2]});  // intensity dropped
  }
  return cloud;
}

void write_velodyne_file(const std::filesystem::path& path, const PointCloud& cloud) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoFailure("cannot open " + path.string() + " for writing");
  std::vector<float> raw;
  raw.reserve(cloud.size() * 4);
  for (const Point3& p : cloud) {
    raw.push_back(static_cast<float>(p.x));
    raw.push_back(static_cast<float>(p.y));
    raw.push_back(static_cast<float>(p.z));
    raw.push_back(0.0f);  // intensity
  }
  if (!raw.empty() &&
      !out.write(reinterpret_cast<const char*>(raw.data()),
                 static_cast<std::streamsize>(raw.size() * sizeof(float)))) {
    throw IoFailure("short write on " + path.string());
  }
}

CameraCalibration read_kitti_calib_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoFailure("cannot open calib file " + path.string());

  std::map<std::string, std::vector<double>> entries;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto colon = line.find(':');
    if (colon == std::string::npos) {
      throw MalformedCalib(path.string() + ":" + std::to_string(line_no) +
                           ": expected 'KEY: values'");
    }
    entries[line.substr(0, colon)] = parse_numbers(line.substr(colon + 1));
  }

  auto need = [&](const std::string& key, std::size_t count) -> const std::vector<double>& {
    const auto it = entries.find(key);
    if (it == entries.end()) {
      throw MalformedCalib(path.string() + ": missing " + key + " entry");
    }
    if (it->second.size() != count) {
      throw MalformedCalib(path.string() + ": " + key + " has " +
                           std::to_string(it->second.size()) + " values, expected " +
                           std::to_string(count));
    }
    return it->second;
  };

  const auto& p2 = need("P2", 12);
  const auto& r0 = need("R0_rect", 9);
  const auto& tr = need("Tr_velo_to_cam", 12);

  Eigen::Matrix<double, 3, 4> p2m;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 4; ++c) p2m(r, c) = p2[4 * r + c];
  }
  Eigen::Matrix4d r0m = Eigen::Matrix4d::Identity();
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) r0m(r, c) = r0[3 * r + c];
  }
  Eigen::Matrix4d trm = Eigen::Matrix4d::Identity();
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 4; ++c) trm(r, c) = tr[4 * r + c];
  }

  return CameraCalibration(p2m * r0m * trm, r0m * trm);
}

void write_kitti_calib_file(const std::filesystem::path& path, const CameraCalibration& calib) {
  // Recover the intrinsic part: P2 = P * (R0 * Tr)^-1 with R0 folded into Tr.
  const Eigen::Matrix<double, 3, 4> p2 = calib.projection() * calib.cloud_to_cam().inverse();

  std::ofstream out(path);
  if (!out) throw IoFailure("cannot open " + path.string() + " for writing");
  char buf[64];
  auto write_mat34 = [&](const std::string& key, const Eigen::Matrix<double, 3, 4>& m) {
    out << key << ":";
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 4; ++c) {
        std::snprintf(buf, sizeof(buf), " %.12e", m(r, c));
        out << buf;
      }
    }
    out << "\n";
  };
  write_mat34("P0", p2);
  write_mat34("P1", p2);
  write_mat34("P2", p2);
  write_mat34("P3", p2);
  out << "R0_rect:";
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) {
      std::snprintf(buf, sizeof(buf), " %.12e", r == c ? 1.0 : 0.0);
      out << buf;
    }
  }
  out << "\n";
  write_mat34("Tr_velo_to_cam", calib.cloud_to_cam().topRows<3>());
}

std::vector<KittiLabelRow> read_kitti_label_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoFailure("cannot open label file " + path.string());

  std::vector<KittiLabelRow> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream fields(line);
    KittiLabelRow row;
    fields >> row.type;
    std::vector<double> nums;
    double v;
    while (fields >> v) nums.push_back(v);
    if (row.type.empty() || (nums.size() != 14 && nums.size() != 15)) {
      throw MalformedLabel(path.string() + ":" + std::to_string(line_no) + ": expected 15 or 16 " +
                           "fields, got " + std::to_string(nums.size() + 1));
    }
    row.truncated = nums[0];
    row.occluded = static_cast<int>(nums[1]);
    row.alpha = nums[2];
    row.bbox = {nums[3], nums[4], nums[5], nums[6]};
    row.height = nums[7];
    row.width = nums[8];
    row.length = nums[9];
    row.x = nums[10];
    row.y = nums[11];
    row.z = nums[12];
    row.rotation_y = nums[13];
    if (nums.size() == 15) row.score = nums[14];

    if (row.type == "DontCare") continue;  // region markers, not objects
    if (row.height <= 0.0 || row.width <= 0.0 || row.length <= 0.0) {
      throw MalformedLabel(path.string() + ":" + std::to_string(line_no) +
                           ": non-positive dimensions");
    }
    if (row.bbox.x_min > row.bbox.x_max || row.bbox.y_min > row.bbox.y_max) {
      throw MalformedLabel(path.string() + ":" + std::to_string(line_no) + ": inverted 2D box");
    }
    rows.push_back(row);
  }
  return rows;
}

void write_kitti_label_file(const std::filesystem::path& path,
                            const std::vector<KittiLabelRow>& rows) {
  std::ofstream out(path);
  if (!out) throw IoFailure("cannot open " + path.string() + " for writing");
  for (const KittiLabelRow& row : rows) {
    out << format_row(row) << "\n";
  }
  if (!out) throw IoFailure("short write on " + path.string());
}

Box3D box_from_label(const KittiLabelRow& row, const CameraCalibration& calib) {
  const Eigen::Matrix4d cam_to_cloud = calib.cloud_to_cam().inverse();
  // Bottom center -> gravity center, then into the cloud frame.
  const Eigen::Vector4d center_cam(row.x, row.y - 0.5 * row.height, row.z, 1.0);
  const Eigen::Vector4d center = cam_to_cloud * center_cam;

  // Heading in camera coordinates, projected back to the cloud BEV plane.
  const Eigen::Vector3d dir_cam(std::cos(row.rotation_y), 0.0, -std::sin(row.rotation_y));
  const Eigen::Vector3d dir = cam_to_cloud.topLeftCorner<3, 3>() * dir_cam;

  Box3D box;
  box.x = center.x();
  box.y = center.y();
  box.z = center.z();
  box.l = row.length;
  box.w = row.width;
  box.h = row.height;
  box.set_yaw(std::atan2(dir.y(), dir.x()));
  return box;
}

KittiLabelRow label_from_box(const std::string& class_label, const Box3D& box, const Rect2D& rect,
                             const CameraCalibration& calib) {
  const Eigen::Matrix4d& to_cam = calib.cloud_to_cam();
  const Eigen::Vector4d center_cam = to_cam * Eigen::Vector4d(box.x, box.y, box.z, 1.0);
  const Eigen::Vector3d dir_cam =
      to_cam.topLeftCorner<3, 3>() * Eigen::Vector3d(box.yaw_cos, box.yaw_sin, 0.0);

  KittiLabelRow row;
  row.type = class_label;
  row.bbox = rect;
  row.height = box.h;
  row.width = box.w;
  row.length = box.l;
  row.x = center_cam.x();
  row.y = center_cam.y() + 0.5 * box.h;  // gravity center -> bottom center
  row.z = center_cam.z();
  row.rotation_y = std::atan2(-dir_cam.z(), dir_cam.x());
  row.alpha = row.rotation_y - std::atan2(row.x, row.z);
  return row;
}

KittiScene read_kitti_scene(const std::filesystem::path& velodyne_path,
                            const std::filesystem::path& calib_path,
                            const std::filesystem::path& label_path, int image_width,
                            int image_height) {
  KittiScene out;
  out.scene.cloud = read_velodyne_file(velodyne_path);
  out.scene.calib = read_kitti_calib_file(calib_path);
  out.scene.image_width = image_width;
  out.scene.image_height = image_height;
  out.labels = read_kitti_label_file(label_path);

  for (const KittiLabelRow& row : out.labels) {
    SceneBox2D box2d;
    box2d.class_label = row.type;
    box2d.rect_raw = row.bbox;
    box2d.rect = row.bbox.clamped(image_width, image_height);
    out.scene.boxes2d.push_back(box2d);
    out.gt_boxes.push_back({row.type, box_from_label(row, out.scene.calib)});
  }
  return out;
}

void write_kitti_labels(const std::filesystem::path& path,
                        const std::vector<std::tuple<std::string, Box3D, Rect2D>>& results,
                        const CameraCalibration& calib) {
  std::vector<KittiLabelRow> rows;
  rows.reserve(results.size());
  for (const auto& [cls, box, rect] : results) {
    rows.push_back(label_from_box(cls, box, rect, calib));
  }
  write_kitti_label_file(path, rows);
}

}  // namespace boxlift
