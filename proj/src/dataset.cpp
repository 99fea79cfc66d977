#include "lvik/dataset.hpp"

#include <json.hpp>

#include <charconv>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>

namespace lvik {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string fmt_stamp(double t) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.12f", t);
  return buf;
}

std::string fmt_value(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

class CsvReader {
 public:
  CsvReader(const fs::path& file) : path_(file.string()), in_(file) {
    if (!in_) throw DataError("cannot open " + path_);
  }

  bool next_line() {
    while (std::getline(in_, line_)) {
      ++line_no_;
      if (line_.empty()) continue;
      return true;
    }
    return false;
  }

  const std::string& line() const { return line_; }
  int line_no() const { return line_no_; }

  // Splits the current line on commas; empty fields stay empty.
  std::vector<std::string_view> fields() const {
    std::vector<std::string_view> out;
    const char* s = line_.data();
    const char* end = s + line_.size();
    const char* tok = s;
    for (const char* p = s; p <= end; ++p) {
      if (p == end || *p == ',') {
        out.emplace_back(tok, static_cast<size_t>(p - tok));
        tok = p + 1;
      }
    }
    return out;
  }

  double num(std::string_view f) const {
    double v = 0.0;
    const auto res = std::from_chars(f.data(), f.data() + f.size(), v);
    if (res.ec != std::errc() || res.ptr != f.data() + f.size())
      throw DataError(path_ + ":" + std::to_string(line_no_) + ": bad number '" +
                      std::string(f) + "'");
    return v;
  }

  long integer(std::string_view f) const {
    long v = 0;
    const auto res = std::from_chars(f.data(), f.data() + f.size(), v);
    if (res.ec != std::errc() || res.ptr != f.data() + f.size())
      throw DataError(path_ + ":" + std::to_string(line_no_) + ": bad integer '" +
                      std::string(f) + "'");
    return v;
  }

  [[noreturn]] void fail(const std::string& what) const {
    throw DataError(path_ + ":" + std::to_string(line_no_) + ": " + what);
  }

 private:
  std::string path_;
  std::ifstream in_;
  std::string line_;
  int line_no_ = 0;
};

json pose_to_json(const Pose3& p) {
  json j;
  j["R"] = std::vector<double>(p.rotation.matrix().data(),
                               p.rotation.matrix().data() + 9);
  j["p"] = {p.translation.x(), p.translation.y(), p.translation.z()};
  return j;
}

Pose3 pose_from_json(const json& j) {
  Pose3 p;
  const auto R = j.at("R").get<std::vector<double>>();
  const auto t = j.at("p").get<std::vector<double>>();
  if (R.size() != 9 || t.size() != 3) throw DataError("calib: bad pose shape");
  p.rotation = Rot3(Eigen::Map<const Mat3>(R.data()));
  p.translation = Vec3(t[0], t[1], t[2]);
  return p;
}

}  // namespace

void write_dataset(const Dataset& ds, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir / "lidar", ec);
  if (ec) throw DataError("cannot create " + (dir / "lidar").string());

  {
    json calib;
    calib["lidar"] = pose_to_json(Pose3{ds.calib.lidar.R_lb, ds.calib.lidar.p_lb});
    calib["lidar"]["period"] = ds.calib.lidar_period;
    calib["camera_left"] = pose_to_json(ds.calib.ext_cl);
    calib["camera_right"] = pose_to_json(ds.calib.ext_cr);
    json legs;
    for (int l = 0; l < kNumLegs; ++l)
      legs["hip_offsets"].push_back({ds.calib.legs.hip_offset[l].x(),
                                     ds.calib.legs.hip_offset[l].y(),
                                     ds.calib.legs.hip_offset[l].z()});
    legs["l_hip"] = ds.calib.legs.l_hip;
    legs["l_thigh"] = ds.calib.legs.l_thigh;
    legs["l_calf"] = ds.calib.legs.l_calf;
    calib["legs"] = legs;
    calib["rates"] = {{"imu", ds.calib.rate_imu},
                      {"joints", ds.calib.rate_joints},
                      {"lidar", ds.calib.rate_lidar},
                      {"camera", ds.calib.rate_camera}};
    std::ofstream out(dir / "calib.json");
    out << calib.dump(2) << "\n";
  }

  {
    std::ofstream out(dir / "imu.csv");
    out << "t,ax,ay,az,gx,gy,gz\n";
    for (const auto& s : ds.imu) {
      out << fmt_stamp(s.stamp);
      for (int i = 0; i < 3; ++i) out << ',' << fmt_value(s.accel[i]);
      for (int i = 0; i < 3; ++i) out << ',' << fmt_value(s.gyro[i]);
      out << '\n';
    }
  }

  {
    std::ofstream out(dir / "joints.csv");
    out << "t,leg,q1,q2,q3,qd1,qd2,qd3\n";
    for (const auto& js : ds.joints) {
      for (int l = 0; l < kNumLegs; ++l) {
        out << fmt_stamp(js.stamp) << ',' << l;
        for (int i = 0; i < 3; ++i) out << ',' << fmt_value(js.q[l][i]);
        for (int i = 0; i < 3; ++i) out << ',' << fmt_value(js.qdot[l][i]);
        out << '\n';
      }
    }
  }

  if (!ds.foot_twists.empty()) {
    std::ofstream out(dir / "foot_twists.csv");
    out << "t,leg,wx,wy,wz,vx,vy,vz\n";
    for (const auto& set : ds.foot_twists) {
      for (int l = 0; l < kNumLegs; ++l) {
        const FootTwist& tw = set[l];
        out << fmt_stamp(tw.stamp) << ',' << l;
        for (int i = 0; i < 3; ++i) out << ',' << fmt_value(tw.omega_xi[i]);
        for (int i = 0; i < 3; ++i) out << ',' << fmt_value(tw.nu_xi[i]);
        out << '\n';
      }
    }
  }

  for (size_t k = 0; k < ds.scans.size(); ++k) {
    char name[32];
    std::snprintf(name, sizeof(name), "%06zu.csv", k);
    std::ofstream out(dir / "lidar" / name);
    const LidarScan& scan = *ds.scans[k];
    out << "# stamp " << fmt_stamp(scan.stamp) << " period " << fmt_value(scan.period)
        << "\n";
    out << "t_offset,x,y,z\n";
    for (const auto& p : scan.points) {
      out << fmt_value(p.t_offset) << ',' << fmt_value(p.xyz.x()) << ','
          << fmt_value(p.xyz.y()) << ',' << fmt_value(p.xyz.z()) << '\n';
    }
  }

  {
    std::ofstream out(dir / "features.csv");
    out << "t,feature_id,ul,vl,ur,vr,cluster_id\n";
    for (const auto& frame : ds.feature_frames) {
      for (const auto& o : frame.observations) {
        out << fmt_stamp(frame.stamp) << ',' << o.feature_id << ','
            << fmt_value(o.left.x()) << ',' << fmt_value(o.left.y()) << ',';
        if (o.right) out << fmt_value(o.right->x()) << ',' << fmt_value(o.right->y());
        else out << ',';
        out << ',';
        if (o.cluster_id) out << *o.cluster_id;
        out << '\n';
      }
    }
  }

  {
    std::ofstream out(dir / "gt.csv");
    out << "t,px,py,pz,qx,qy,qz,qw\n";
    for (const auto& sp : ds.ground_truth) {
      const auto q = sp.pose.rotation.quaternion();
      out << fmt_stamp(sp.stamp) << ',' << fmt_value(sp.pose.translation.x()) << ','
          << fmt_value(sp.pose.translation.y()) << ','
          << fmt_value(sp.pose.translation.z()) << ',' << fmt_value(q.x()) << ','
          << fmt_value(q.y()) << ',' << fmt_value(q.z()) << ',' << fmt_value(q.w())
          << '\n';
    }
  }
}

Dataset read_dataset(const fs::path& dir) {
  Dataset ds;
  if (!fs::exists(dir / "calib.json"))
    throw DataError("missing calib.json in " + dir.string());

  {
    std::ifstream in(dir / "calib.json");
    json calib = json::parse(in, nullptr, true);
    const Pose3 lidar = pose_from_json(calib.at("lidar"));
    ds.calib.lidar.R_lb = lidar.rotation;
    ds.calib.lidar.p_lb = lidar.translation;
    ds.calib.lidar_period = calib.at("lidar").at("period").get<double>();
    ds.calib.ext_cl = pose_from_json(calib.at("camera_left"));
    ds.calib.ext_cr = pose_from_json(calib.at("camera_right"));
    const json& legs = calib.at("legs");
    const auto hips = legs.at("hip_offsets").get<std::vector<std::vector<double>>>();
    if (hips.size() != kNumLegs) throw DataError("calib: need 4 hip offsets");
    for (int l = 0; l < kNumLegs; ++l)
      ds.calib.legs.hip_offset[l] = Vec3(hips[l][0], hips[l][1], hips[l][2]);
    ds.calib.legs.l_hip = legs.at("l_hip").get<double>();
    ds.calib.legs.l_thigh = legs.at("l_thigh").get<double>();
    ds.calib.legs.l_calf = legs.at("l_calf").get<double>();
    ds.calib.rate_imu = calib.at("rates").at("imu").get<double>();
    ds.calib.rate_joints = calib.at("rates").at("joints").get<double>();
    ds.calib.rate_lidar = calib.at("rates").at("lidar").get<double>();
    ds.calib.rate_camera = calib.at("rates").at("camera").get<double>();
  }

  if (fs::exists(dir / "imu.csv")) {
    CsvReader r(dir / "imu.csv");
    r.next_line();  // header
    while (r.next_line()) {
      const auto f = r.fields();
      if (f.size() != 7) r.fail("expected 7 fields");
      ImuSample s;
      s.stamp = r.num(f[0]);
      s.accel = Vec3(r.num(f[1]), r.num(f[2]), r.num(f[3]));
      s.gyro = Vec3(r.num(f[4]), r.num(f[5]), r.num(f[6]));
      ds.imu.push_back(s);
    }
  }

  if (fs::exists(dir / "joints.csv")) {
    CsvReader r(dir / "joints.csv");
    r.next_line();
    std::map<double, JointSample> by_stamp;
    while (r.next_line()) {
      const auto f = r.fields();
      if (f.size() != 8) r.fail("expected 8 fields");
      const double t = r.num(f[0]);
      const long leg = r.integer(f[1]);
      if (leg < 0 || leg >= kNumLegs) r.fail("leg index out of range");
      JointSample& js = by_stamp[t];
      js.stamp = t;
      js.q[leg] = Vec3(r.num(f[2]), r.num(f[3]), r.num(f[4]));
      js.qdot[leg] = Vec3(r.num(f[5]), r.num(f[6]), r.num(f[7]));
    }
    for (auto& [t, js] : by_stamp) ds.joints.push_back(js);
  }

  if (fs::exists(dir / "foot_twists.csv")) {
    CsvReader r(dir / "foot_twists.csv");
    r.next_line();
    std::map<double, std::array<FootTwist, kNumLegs>> by_stamp;
    while (r.next_line()) {
      const auto f = r.fields();
      if (f.size() != 8) r.fail("expected 8 fields");
      const double t = r.num(f[0]);
      const long leg = r.integer(f[1]);
      if (leg < 0 || leg >= kNumLegs) r.fail("leg index out of range");
      FootTwist tw;
      tw.stamp = t;
      tw.leg = static_cast<int>(leg);
      tw.omega_xi = Vec3(r.num(f[2]), r.num(f[3]), r.num(f[4]));
      tw.nu_xi = Vec3(r.num(f[5]), r.num(f[6]), r.num(f[7]));
      by_stamp[t][leg] = tw;
    }
    for (auto& [t, set] : by_stamp) ds.foot_twists.push_back(set);
  }

  if (fs::exists(dir / "lidar")) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir / "lidar")) {
      if (e.path().extension() == ".csv") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& file : files) {
      CsvReader r(file);
      auto scan = std::make_shared<LidarScan>();
      if (!r.next_line() || r.line().rfind("# stamp ", 0) != 0)
        r.fail("expected '# stamp <t> period <p>' header");
      if (std::sscanf(r.line().c_str(), "# stamp %lf period %lf", &scan->stamp,
                      &scan->period) != 2)
        r.fail("bad scan header");
      r.next_line();  // column header
      while (r.next_line()) {
        const auto f = r.fields();
        if (f.size() != 4) r.fail("expected 4 fields");
        scan->points.push_back(
            {r.num(f[0]), Vec3(r.num(f[1]), r.num(f[2]), r.num(f[3]))});
      }
      ds.scans.push_back(std::move(scan));
    }
  }

  if (fs::exists(dir / "features.csv")) {
    CsvReader r(dir / "features.csv");
    r.next_line();
    FeatureFrame current;
    bool have = false;
    while (r.next_line()) {
      const auto f = r.fields();
      if (f.size() != 7) r.fail("expected 7 fields");
      FeatureObservation o;
      o.stamp = r.num(f[0]);
      o.feature_id = r.integer(f[1]);
      o.left = Vec2(r.num(f[2]), r.num(f[3]));
      if (!f[4].empty() && !f[5].empty()) o.right = Vec2(r.num(f[4]), r.num(f[5]));
      if (!f[6].empty()) o.cluster_id = r.integer(f[6]);
      if (!have || o.stamp != current.stamp) {
        if (have) ds.feature_frames.push_back(std::move(current));
        current = FeatureFrame{};
        current.stamp = o.stamp;
        have = true;
      }
      current.observations.push_back(std::move(o));
    }
    if (have) ds.feature_frames.push_back(std::move(current));
  }

  if (fs::exists(dir / "gt.csv")) {
    ds.ground_truth = read_trajectory(dir / "gt.csv");
  }
  return ds;
}

std::string trajectory_text(const Trajectory& traj) {
  std::string out = "t,px,py,pz,qx,qy,qz,qw\n";
  for (const auto& sp : traj) {
    const auto q = sp.pose.rotation.quaternion();
    out += fmt_stamp(sp.stamp);
    out += ',';
    out += fmt_value(sp.pose.translation.x());
    out += ',';
    out += fmt_value(sp.pose.translation.y());
    out += ',';
    out += fmt_value(sp.pose.translation.z());
    out += ',';
    out += fmt_value(q.x());
    out += ',';
    out += fmt_value(q.y());
    out += ',';
    out += fmt_value(q.z());
    out += ',';
    out += fmt_value(q.w());
    out += '\n';
  }
  return out;
}

void write_trajectory(const Trajectory& traj, const fs::path& file) {
  std::ofstream out(file);
  if (!out) throw DataError("cannot write " + file.string());
  out << trajectory_text(traj);
}

Trajectory read_trajectory(const fs::path& file) {
  CsvReader r(file);
  r.next_line();  // header
  Trajectory traj;
  while (r.next_line()) {
    const auto f = r.fields();
    if (f.size() != 8) r.fail("expected 8 fields");
    StampedPose sp;
    sp.stamp = r.num(f[0]);
    sp.pose.translation = Vec3(r.num(f[1]), r.num(f[2]), r.num(f[3]));
    sp.pose.rotation =
        Rot3::from_quaternion(r.num(f[7]), r.num(f[4]), r.num(f[5]), r.num(f[6]));
    traj.push_back(sp);
  }
  return traj;
}

}  // namespace lvik
