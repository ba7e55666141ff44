#include "mvanon/io.hpp"

#include <cctype>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "mvanon/errors.hpp"
#include "vendor/json.hpp"

namespace mvanon::io {
namespace {

using nlohmann::json;

[[noreturn]] void parse_fail(const std::filesystem::path& path,
                             const std::string& what) {
  throw ParseError(path.string() + ": " + what);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(path.string() + ": cannot open");
  std::ostringstream buf;
  buf << in.rdbuf();
  return std::move(buf).str();
}

void write_file(const std::filesystem::path& path, const std::string& data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ParseError(path.string() + ": cannot open for writing");
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out) throw ParseError(path.string() + ": write failed");
}

// PNM header token: skips whitespace and '#' comments.
std::string pnm_token(const std::string& data, std::size_t& pos,
                      const std::filesystem::path& path) {
  while (pos < data.size()) {
    if (std::isspace(static_cast<unsigned char>(data[pos]))) {
      ++pos;
    } else if (data[pos] == '#') {
      while (pos < data.size() && data[pos] != '\n') ++pos;
    } else {
      break;
    }
  }
  std::size_t start = pos;
  while (pos < data.size() &&
         !std::isspace(static_cast<unsigned char>(data[pos])) &&
         data[pos] != '#') {
    ++pos;
  }
  if (start == pos) parse_fail(path, "truncated header");
  return data.substr(start, pos - start);
}

int pnm_int(const std::string& data, std::size_t& pos,
            const std::filesystem::path& path, const char* field) {
  const std::string tok = pnm_token(data, pos, path);
  try {
    std::size_t used = 0;
    const int value = std::stoi(tok, &used);
    if (used != tok.size()) throw std::invalid_argument(tok);
    return value;
  } catch (const std::exception&) {
    parse_fail(path, std::string("bad ") + field + " '" + tok + "'");
  }
}

double json_number(const json& obj, const char* key,
                   const std::filesystem::path& path) {
  if (!obj.contains(key) || !obj[key].is_number())
    parse_fail(path, std::string("missing numeric field '") + key + "'");
  return obj[key].get<double>();
}

// Shortest round-trip-exact decimal form; keeps files both stable and readable.
std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  double back = 0.0;
  std::sscanf(buf, "%lf", &back);
  if (back == v) {
    for (int prec = 1; prec < 17; ++prec) {
      char shorter[32];
      std::snprintf(shorter, sizeof shorter, "%.*g", prec, v);
      std::sscanf(shorter, "%lf", &back);
      if (back == v) return shorter;
    }
  }
  return buf;
}

std::vector<std::string> non_empty_lines(const std::string& data) {
  std::vector<std::string> lines;
  std::istringstream in(data);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") != std::string::npos)
      lines.push_back(line);
  }
  return lines;
}

}  // namespace

std::string frame_name(int frame_index) {
  if (frame_index < 0) throw ConfigInvalid("negative frame index");
  char buf[16];
  std::snprintf(buf, sizeof buf, "%06d", frame_index);
  return buf;
}

void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec && !std::filesystem::is_directory(dir))
    throw ConfigInvalid("cannot create directory " + dir.string() + ": " +
                        ec.message());
}

Image8 load_ppm(const std::filesystem::path& path) {
  const std::string data = read_file(path);
  std::size_t pos = 0;
  if (pnm_token(data, pos, path) != "P6") parse_fail(path, "not a P6 PPM");
  const int w = pnm_int(data, pos, path, "width");
  const int h = pnm_int(data, pos, path, "height");
  const int maxval = pnm_int(data, pos, path, "maxval");
  if (w <= 0 || h <= 0) parse_fail(path, "non-positive dimensions");
  if (maxval != 255) parse_fail(path, "unsupported maxval");
  ++pos;  // single whitespace byte after maxval
  const std::size_t need = static_cast<std::size_t>(w) * h * 3;
  if (data.size() - pos < need) parse_fail(path, "truncated pixel data");
  Image8 img(w, h);
  std::memcpy(img.data.data(), data.data() + pos, need);
  return img;
}

void save_ppm(const Image8& img, const std::filesystem::path& path) {
  std::string out = "P6\n" + std::to_string(img.width) + " " +
                    std::to_string(img.height) + "\n255\n";
  out.append(reinterpret_cast<const char*>(img.data.data()), img.data.size());
  write_file(path, out);
}

DepthFrame load_depth_pgm(const std::filesystem::path& path) {
  const std::string data = read_file(path);
  std::size_t pos = 0;
  if (pnm_token(data, pos, path) != "P5") parse_fail(path, "not a P5 PGM");
  const int w = pnm_int(data, pos, path, "width");
  const int h = pnm_int(data, pos, path, "height");
  const int maxval = pnm_int(data, pos, path, "maxval");
  if (w <= 0 || h <= 0) parse_fail(path, "non-positive dimensions");
  if (maxval != 65535) parse_fail(path, "expected 16-bit depth (maxval 65535)");
  ++pos;
  const std::size_t need = static_cast<std::size_t>(w) * h * 2;
  if (data.size() - pos < need) parse_fail(path, "truncated depth data");
  DepthFrame depth(w, h);
  const auto* bytes = reinterpret_cast<const unsigned char*>(data.data() + pos);
  for (std::size_t i = 0; i < static_cast<std::size_t>(w) * h; ++i) {
    depth.values[i] =
        static_cast<std::uint16_t>((bytes[2 * i] << 8) | bytes[2 * i + 1]);
  }
  return depth;
}

void save_depth_pgm(const DepthFrame& depth, const std::filesystem::path& path) {
  std::string out = "P5\n" + std::to_string(depth.width) + " " +
                    std::to_string(depth.height) + "\n65535\n";
  out.reserve(out.size() + depth.values.size() * 2);
  for (const std::uint16_t v : depth.values) {
    out.push_back(static_cast<char>(v >> 8));
    out.push_back(static_cast<char>(v & 0xff));
  }
  write_file(path, out);
}

CameraRig load_calibration(const std::filesystem::path& path) {
  json doc;
  try {
    doc = json::parse(read_file(path));
  } catch (const json::exception& e) {
    parse_fail(path, e.what());
  }
  if (!doc.contains("cameras") || !doc["cameras"].is_array() ||
      doc["cameras"].empty())
    parse_fail(path, "missing non-empty 'cameras' array");

  CameraRig rig;
  for (const json& c : doc["cameras"]) {
    Camera cam;
    if (!c.contains("id") || !c["id"].is_string())
      parse_fail(path, "camera without string 'id'");
    cam.id = c["id"].get<std::string>();
    try {
      cam.role = camera_role_from_string(c.value("role", std::string("workflow")));
    } catch (const ParseError& e) {
      parse_fail(path, "camera '" + cam.id + "': " + e.what());
    }
    cam.intrinsics.width = static_cast<int>(json_number(c, "width", path));
    cam.intrinsics.height = static_cast<int>(json_number(c, "height", path));
    cam.intrinsics.fx = json_number(c, "fx", path);
    cam.intrinsics.fy = json_number(c, "fy", path);
    cam.intrinsics.cx = json_number(c, "cx", path);
    cam.intrinsics.cy = json_number(c, "cy", path);
    if (cam.intrinsics.width <= 0 || cam.intrinsics.height <= 0)
      parse_fail(path, "camera '" + cam.id + "': non-positive image size");
    if (cam.intrinsics.fx <= 0 || cam.intrinsics.fy <= 0)
      parse_fail(path, "camera '" + cam.id + "': non-positive focal length");
    if (!c.contains("world_from_camera") || !c["world_from_camera"].is_array() ||
        c["world_from_camera"].size() != 16)
      parse_fail(path,
                 "camera '" + cam.id + "': world_from_camera must be 16 values");
    Mat4 m;
    for (int i = 0; i < 16; ++i) {
      const json& v = c["world_from_camera"][i];
      if (!v.is_number())
        parse_fail(path, "camera '" + cam.id + "': non-numeric matrix entry");
      m(i / 4, i % 4) = v.get<double>();
    }
    if ((m.row(3) - Eigen::RowVector4d(0, 0, 0, 1)).norm() > 1e-9)
      parse_fail(path, "camera '" + cam.id + "': last matrix row must be 0 0 0 1");
    const Mat3 r = m.topLeftCorner<3, 3>();
    if ((r * r.transpose() - Mat3::Identity()).norm() > 1e-6 ||
        r.determinant() < 0)
      parse_fail(path, "camera '" + cam.id + "': rotation block not a rotation");
    RigidTransform pose;
    pose.rotation = r;
    pose.translation = m.topRightCorner<3, 1>();
    cam.world_from_camera = pose;
    rig.cameras.push_back(std::move(cam));
  }
  for (std::size_t i = 0; i < rig.cameras.size(); ++i)
    for (std::size_t j = i + 1; j < rig.cameras.size(); ++j)
      if (rig.cameras[i].id == rig.cameras[j].id)
        parse_fail(path, "duplicate camera id '" + rig.cameras[i].id + "'");
  return rig;
}

void save_calibration(const CameraRig& rig, const std::filesystem::path& path) {
  json doc;
  doc["cameras"] = json::array();
  for (const Camera& cam : rig.cameras) {
    json c;
    c["id"] = cam.id;
    c["role"] = to_string(cam.role);
    c["width"] = cam.intrinsics.width;
    c["height"] = cam.intrinsics.height;
    c["fx"] = cam.intrinsics.fx;
    c["fy"] = cam.intrinsics.fy;
    c["cx"] = cam.intrinsics.cx;
    c["cy"] = cam.intrinsics.cy;
    json m = json::array();
    Mat4 w = Mat4::Identity();
    w.topLeftCorner<3, 3>() = cam.world_from_camera.rotation;
    w.topRightCorner<3, 1>() = cam.world_from_camera.translation;
    for (int i = 0; i < 16; ++i) m.push_back(w(i / 4, i % 4));
    c["world_from_camera"] = std::move(m);
    doc["cameras"].push_back(std::move(c));
  }
  write_file(path, doc.dump(2) + "\n");
}

std::vector<Pose2D> load_keypoints(const std::filesystem::path& path,
                                   const Camera& camera) {
  const std::vector<std::string> lines = non_empty_lines(read_file(path));
  std::vector<Pose2D> poses;
  poses.reserve(lines.size());
  for (std::size_t li = 0; li < lines.size(); ++li) {
    std::istringstream in(lines[li]);
    Pose2D pose;
    pose.camera = &camera;
    for (int j = 0; j < kJointCount; ++j) {
      Keypoint2D& kp = pose.joints[j];
      kp.joint_id = j;
      if (!(in >> kp.pixel.x() >> kp.pixel.y() >> kp.confidence))
        parse_fail(path, "line " + std::to_string(li + 1) +
                             ": expected 51 numbers (17 x-y-confidence triples)");
      if (kp.confidence < 0.0 || kp.confidence > 1.0)
        parse_fail(path, "line " + std::to_string(li + 1) +
                             ": confidence outside [0, 1]");
      if (!camera.intrinsics.contains(kp.pixel)) kp.confidence = 0.0;
    }
    double trailing;
    if (in >> trailing)
      parse_fail(path, "line " + std::to_string(li + 1) + ": trailing data");
    poses.push_back(pose);
  }
  return poses;
}

void save_keypoints(const std::vector<Pose2D>& poses,
                    const std::filesystem::path& path) {
  std::string out;
  for (const Pose2D& pose : poses) {
    for (int j = 0; j < kJointCount; ++j) {
      const Keypoint2D& kp = pose.joints[j];
      if (j) out += ' ';
      out += fmt(kp.pixel.x()) + ' ' + fmt(kp.pixel.y()) + ' ' +
             fmt(kp.confidence);
    }
    out += '\n';
  }
  write_file(path, out);
}

std::vector<Pose3D> load_poses3d(const std::filesystem::path& path,
                                 int frame_index) {
  const std::vector<std::string> lines = non_empty_lines(read_file(path));
  std::vector<Pose3D> poses;
  poses.reserve(lines.size());
  for (std::size_t li = 0; li < lines.size(); ++li) {
    std::istringstream in(lines[li]);
    Pose3D pose;
    pose.frame_index = frame_index;
    for (int j = 0; j < kJointCount; ++j) {
      double x, y, z;
      int valid;
      if (!(in >> x >> y >> z >> valid) || (valid != 0 && valid != 1))
        parse_fail(path, "line " + std::to_string(li + 1) +
                             ": expected 17 x-y-z-valid entries");
      pose.joints[j] = Vec3(x, y, z);
      pose.valid[j] = valid != 0;
    }
    double trailing;
    if (in >> trailing)
      parse_fail(path, "line " + std::to_string(li + 1) + ": trailing data");
    poses.push_back(pose);
  }
  return poses;
}

void save_poses3d(const std::vector<Pose3D>& poses,
                  const std::filesystem::path& path) {
  std::string out;
  for (const Pose3D& pose : poses) {
    for (int j = 0; j < kJointCount; ++j) {
      const Vec3 p = pose.valid[j] ? pose.joints[j] : Vec3::Zero();
      if (j) out += ' ';
      out += fmt(p.x()) + ' ' + fmt(p.y()) + ' ' + fmt(p.z()) + ' ' +
             (pose.valid[j] ? '1' : '0');
    }
    out += '\n';
  }
  write_file(path, out);
}

std::vector<FaceBox> load_face_boxes(const std::filesystem::path& path,
                                     bool with_flag) {
  const std::vector<std::string> lines = non_empty_lines(read_file(path));
  std::vector<FaceBox> boxes;
  boxes.reserve(lines.size());
  for (std::size_t li = 0; li < lines.size(); ++li) {
    std::istringstream in(lines[li]);
    FaceBox fb;
    double x, y, w, h;
    if (!(in >> fb.frame_index >> fb.camera_id >> fb.person_id >> x >> y >> w >>
          h))
      parse_fail(path, "line " + std::to_string(li + 1) +
                           ": expected frame camera person x y w h");
    if (with_flag) {
      int flag;
      if (!(in >> flag) || (flag != 0 && flag != 1))
        parse_fail(path, "line " + std::to_string(li + 1) +
                             ": expected trailing 0/1 occlusion flag");
      fb.fully_occluded = flag != 0;
    }
    double trailing;
    if (in >> trailing)
      parse_fail(path, "line " + std::to_string(li + 1) + ": trailing data");
    if (w < 0 || h < 0)
      parse_fail(path, "line " + std::to_string(li + 1) + ": negative box size");
    fb.box = BBox2D{x, y, x + w, y + h};
    boxes.push_back(fb);
  }
  return boxes;
}

void save_face_boxes(const std::vector<FaceBox>& boxes, bool with_flag,
                     const std::filesystem::path& path) {
  std::string out;
  for (const FaceBox& fb : boxes) {
    out += std::to_string(fb.frame_index) + ' ' + fb.camera_id + ' ' +
           std::to_string(fb.person_id) + ' ' + fmt(fb.box.x_min) + ' ' +
           fmt(fb.box.y_min) + ' ' + fmt(fb.box.width()) + ' ' +
           fmt(fb.box.height());
    if (with_flag) out += fb.fully_occluded ? " 1" : " 0";
    out += '\n';
  }
  write_file(path, out);
}

}  // namespace mvanon::io
