#include "lvik/config.hpp"

#include <json.hpp>

#include <fstream>
#include <set>

#include "lvik/dataset.hpp"

namespace lvik {

using nlohmann::json;

namespace {

// Strict section reader: every key must be consumed.
class Section {
 public:
  Section(const json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) throw ConfigError("config section '" + name_ + "' must be an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    if (auto it = j_.find(key); it != j_.end()) {
      try {
        out = it->get<T>();
      } catch (const json::exception&) {
        throw ConfigError("config key '" + name_ + "." + key + "' has the wrong type");
      }
      seen_.insert(key);
    }
  }

  void get_choice(const char* key, std::string& out, const std::set<std::string>& valid) {
    std::string v = out;
    get(key, v);
    if (!valid.count(v)) {
      std::string opts;
      for (const auto& o : valid) opts += (opts.empty() ? "" : "|") + o;
      throw ConfigError("config key '" + name_ + "." + key + "' must be one of " + opts);
    }
    out = v;
  }

  json sub(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? json::object() : *it;
  }

  ~Section() noexcept(false) {
    if (std::uncaught_exceptions() > exceptions_on_entry_) return;
    for (const auto& [key, val] : j_.items()) {
      if (!seen_.count(key))
        throw ConfigError("unknown config key '" + name_ + "." + key + "'");
    }
  }

 private:
  const json& j_;
  std::string name_;
  std::set<std::string> seen_;
  int exceptions_on_entry_ = std::uncaught_exceptions();
};

}  // namespace

void RunConfig::finalize() {
  if (zero_noise) noise.zero();
  viko.fix_extrinsics = fix_extrinsics;
  viko.consistency_paper_form = consistency_form == "paper";
  viko.imu_noise = imu_model;
  liko.workers = workers;
}

RunConfig default_config() {
  RunConfig cfg;
  cfg.finalize();
  return cfg;
}

RunConfig parse_config_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }

  RunConfig cfg;
  Section root(j, "");
  root.get("seed", cfg.seed);
  root.get("workers", cfg.workers);
  root.get_choice("mode", cfg.mode, {"lviq", "liko", "viko"});
  root.get("zero_noise", cfg.zero_noise);
  root.get("fix_extrinsics", cfg.fix_extrinsics);
  root.get_choice("consistency_form", cfg.consistency_form, {"shifted", "paper"});
  root.get_choice("jacobian_form", cfg.jacobian_form, {"analytic", "paper"});
  root.get_choice("foot_twist_source", cfg.foot_twist_source, {"joints", "direct"});
  root.get_choice("cluster_source", cfg.cluster_source, {"grid", "truth"});
  root.get("foot_sigma_omega", cfg.foot_sigma_omega);
  root.get("foot_sigma_nu", cfg.foot_sigma_nu);

  {
    Section s(root.sub("noise"), "noise");
    s.get("accel", cfg.noise.accel);
    s.get("gyro", cfg.noise.gyro);
    s.get("accel_walk", cfg.noise.accel_walk);
    s.get("gyro_walk", cfg.noise.gyro_walk);
    s.get("lidar_range", cfg.noise.lidar_range);
    s.get("feature_px", cfg.noise.feature_px);
    s.get("joint_angle", cfg.noise.joint_angle);
    s.get("joint_rate", cfg.noise.joint_rate);
    s.get("foot_twist_w", cfg.noise.foot_twist_w);
    s.get("foot_twist_v", cfg.noise.foot_twist_v);
    s.get("track_loss", cfg.noise.track_loss);
  }
  {
    Section s(root.sub("world"), "world");
    s.get_choice("kind", cfg.world.kind, {"default", "corridor"});
    s.get("corridor_length", cfg.world.corridor_length);
    s.get("corridor_width", cfg.world.corridor_width);
    s.get("room_size", cfg.world.room_size);
    s.get("height", cfg.world.height);
    s.get("landmark_spacing", cfg.world.landmark_spacing);
  }
  {
    Section s(root.sub("gait"), "gait");
    s.get("duration", cfg.gait.duration);
    s.get("speed", cfg.gait.speed);
    s.get("cycle", cfg.gait.cycle);
    s.get("body_height", cfg.gait.body_height);
    s.get("bounce_amplitude", cfg.gait.bounce_amplitude);
    s.get("swing_height", cfg.gait.swing_height);
    s.get("yaw_turn", cfg.gait.yaw_turn);
  }
  {
    Section s(root.sub("rates"), "rates");
    s.get("imu", cfg.rates.imu);
    s.get("joints", cfg.rates.joints);
    s.get("lidar", cfg.rates.lidar);
    s.get("camera", cfg.rates.camera);
    s.get("lidar_points", cfg.rates.lidar_points);
    s.get("lidar_rings", cfg.rates.lidar_rings);
    if (cfg.rates.imu <= 0 || cfg.rates.joints <= 0 || cfg.rates.lidar <= 0 ||
        cfg.rates.camera <= 0)
      throw ConfigError("rates must be positive");
  }
  {
    Section s(root.sub("imu_model"), "imu_model");
    s.get("sigma_a", cfg.imu_model.sigma_a);
    s.get("sigma_g", cfg.imu_model.sigma_g);
    s.get("sigma_ba", cfg.imu_model.sigma_ba);
    s.get("sigma_bg", cfg.imu_model.sigma_bg);
  }
  {
    Section s(root.sub("liko"), "liko");
    s.get("max_iterations", cfg.liko.max_iterations);
    s.get("convergence_eps", cfg.liko.convergence_eps);
    s.get("sigma_point", cfg.liko.sigma_point);
    s.get("outlier_gate", cfg.liko.outlier_gate);
    s.get("min_matches", cfg.liko.min_matches);
    s.get("max_points", cfg.liko.max_points);
    s.get("use_foot", cfg.liko.use_foot);
  }
  {
    Section s(root.sub("viko"), "viko");
    s.get("max_iterations", cfg.viko.max_iterations);
    s.get("huber_delta", cfg.viko.huber_delta);
    s.get("capacity", cfg.viko.capacity);
    s.get("visual_sigma", cfg.viko.visual_sigma);
    s.get("w_co", cfg.viko.w_co);
    s.get("consistency_c1", cfg.viko.consistency_c1);
    s.get("consistency_c2", cfg.viko.consistency_c2);
    s.get("use_consistency", cfg.viko.use_consistency);
    s.get("use_foot", cfg.viko.use_foot);
    s.get("fk_sigma_pos", cfg.viko.fk_sigma_pos);
    s.get("fk_sigma_rot", cfg.viko.fk_sigma_rot);
    s.get("keyframe_parallax", cfg.viko.keyframe_parallax);
    s.get("keyframe_min_tracked", cfg.viko.keyframe_min_tracked);
    s.get("min_depth", cfg.viko.min_depth);
    s.get("max_depth", cfg.viko.max_depth);
  }
  {
    Section s(root.sub("scheduler"), "scheduler");
    s.get("imu_gap_warning", cfg.scheduler.imu_gap_warning);
    s.get("gap_inflation", cfg.scheduler.gap_inflation);
  }
  {
    Section s(root.sub("eval"), "eval");
    s.get("align_poses", cfg.eval_align_poses);
    s.get("rpe_delta", cfg.eval_rpe_delta);
  }

  cfg.finalize();
  return cfg;
}

RunConfig load_config(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot open config " + file.string());
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  return parse_config_text(text);
}

std::string config_echo(const RunConfig& cfg) {
  json j;
  j["seed"] = cfg.seed;
  j["workers"] = cfg.workers;
  j["mode"] = cfg.mode;
  j["zero_noise"] = cfg.zero_noise;
  j["fix_extrinsics"] = cfg.fix_extrinsics;
  j["consistency_form"] = cfg.consistency_form;
  j["jacobian_form"] = cfg.jacobian_form;
  j["foot_twist_source"] = cfg.foot_twist_source;
  j["cluster_source"] = cfg.cluster_source;
  j["foot_sigma_omega"] = cfg.foot_sigma_omega;
  j["foot_sigma_nu"] = cfg.foot_sigma_nu;
  j["noise"] = {{"accel", cfg.noise.accel},
                {"gyro", cfg.noise.gyro},
                {"accel_walk", cfg.noise.accel_walk},
                {"gyro_walk", cfg.noise.gyro_walk},
                {"lidar_range", cfg.noise.lidar_range},
                {"feature_px", cfg.noise.feature_px},
                {"joint_angle", cfg.noise.joint_angle},
                {"joint_rate", cfg.noise.joint_rate},
                {"foot_twist_w", cfg.noise.foot_twist_w},
                {"foot_twist_v", cfg.noise.foot_twist_v},
                {"track_loss", cfg.noise.track_loss}};
  j["world"] = {{"kind", cfg.world.kind},
                {"corridor_length", cfg.world.corridor_length},
                {"corridor_width", cfg.world.corridor_width},
                {"room_size", cfg.world.room_size},
                {"height", cfg.world.height},
                {"landmark_spacing", cfg.world.landmark_spacing}};
  j["gait"] = {{"duration", cfg.gait.duration},
               {"speed", cfg.gait.speed},
               {"cycle", cfg.gait.cycle},
               {"body_height", cfg.gait.body_height},
               {"bounce_amplitude", cfg.gait.bounce_amplitude},
               {"swing_height", cfg.gait.swing_height},
               {"yaw_turn", cfg.gait.yaw_turn}};
  j["rates"] = {{"imu", cfg.rates.imu},
                {"joints", cfg.rates.joints},
                {"lidar", cfg.rates.lidar},
                {"camera", cfg.rates.camera},
                {"lidar_points", cfg.rates.lidar_points},
                {"lidar_rings", cfg.rates.lidar_rings}};
  j["imu_model"] = {{"sigma_a", cfg.imu_model.sigma_a},
                    {"sigma_g", cfg.imu_model.sigma_g},
                    {"sigma_ba", cfg.imu_model.sigma_ba},
                    {"sigma_bg", cfg.imu_model.sigma_bg}};
  j["liko"] = {{"max_iterations", cfg.liko.max_iterations},
               {"convergence_eps", cfg.liko.convergence_eps},
               {"sigma_point", cfg.liko.sigma_point},
               {"outlier_gate", cfg.liko.outlier_gate},
               {"min_matches", cfg.liko.min_matches},
               {"max_points", cfg.liko.max_points},
               {"use_foot", cfg.liko.use_foot}};
  j["viko"] = {{"max_iterations", cfg.viko.max_iterations},
               {"huber_delta", cfg.viko.huber_delta},
               {"capacity", cfg.viko.capacity},
               {"visual_sigma", cfg.viko.visual_sigma},
               {"w_co", cfg.viko.w_co},
               {"consistency_c1", cfg.viko.consistency_c1},
               {"consistency_c2", cfg.viko.consistency_c2},
               {"use_consistency", cfg.viko.use_consistency},
               {"use_foot", cfg.viko.use_foot},
               {"fk_sigma_pos", cfg.viko.fk_sigma_pos},
               {"fk_sigma_rot", cfg.viko.fk_sigma_rot},
               {"keyframe_parallax", cfg.viko.keyframe_parallax},
               {"keyframe_min_tracked", cfg.viko.keyframe_min_tracked},
               {"min_depth", cfg.viko.min_depth},
               {"max_depth", cfg.viko.max_depth}};
  j["scheduler"] = {{"imu_gap_warning", cfg.scheduler.imu_gap_warning},
                    {"gap_inflation", cfg.scheduler.gap_inflation}};
  j["eval"] = {{"align_poses", cfg.eval_align_poses},
               {"rpe_delta", cfg.eval_rpe_delta}};
  return j.dump(2);
}

}  // namespace lvik
