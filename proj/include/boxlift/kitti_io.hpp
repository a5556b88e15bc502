#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "boxlift/evaluation.hpp"
#include "boxlift/preprocess.hpp"

namespace boxlift {

/// One row of a KITTI object label file. Location is the bottom-center of the
/// box in the rectified camera frame (x right, y down, z forward);
/// dimensions are stored in KITTI's h, w, l order.
struct KittiLabelRow {
  std::string type;
  double truncated{0.0};
  int occluded{0};
  double alpha{0.0};
  Rect2D bbox;
  double height{0.0};
  double width{0.0};
  double length{0.0};
  double x{0.0};
  double y{0.0};
  double z{0.0};
  double rotation_y{0.0};
  std::optional<double> score;
};

PointCloud read_velodyne_file(const std::filesystem::path& path);
void write_velodyne_file(const std::filesystem::path& path, const PointCloud& cloud);

/// Composes P2 * R0_rect * Tr_velo_to_cam with homogeneous padding; the rigid
/// part (R0 * Tr) is kept for label frame conversion.
CameraCalibration read_kitti_calib_file(const std::filesystem::path& path);
void write_kitti_calib_file(const std::filesystem::path& path, const CameraCalibration& calib);

std::vector<KittiLabelRow> read_kitti_label_file(const std::filesystem::path& path);
void write_kitti_label_file(const std::filesystem::path& path,
                            const std::vector<KittiLabelRow>& rows);

/// Camera-frame bottom-center label -> gravity-center cloud-frame box.
Box3D box_from_label(const KittiLabelRow& row, const CameraCalibration& calib);

/// Inverse of box_from_label; alpha is derived as rotation_y - atan2(x, z).
KittiLabelRow label_from_box(const std::string& class_label, const Box3D& box, const Rect2D& rect,
                             const CameraCalibration& calib);

struct KittiScene {
  Scene scene;
  std::vector<LabeledBox> gt_boxes;   // cloud frame
  std::vector<KittiLabelRow> labels;  // raw rows, DontCare rows dropped
};

KittiScene read_kitti_scene(const std::filesystem::path& velodyne_path,
                            const std::filesystem::path& calib_path,
                            const std::filesystem::path& label_path, int image_width,
                            int image_height);

/// Pseudo-label output: one row per fitted box.
void write_kitti_labels(const std::filesystem::path& path,
                        const std::vector<std::tuple<std::string, Box3D, Rect2D>>& results,
                        const CameraCalibration& calib);

}  // namespace boxlift
