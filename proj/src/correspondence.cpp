#include "bimap/correspondence.hpp"

#include "bimap/errors.hpp"

#include <fstream>
#include <sstream>

namespace bimap {

using nlohmann::json;

Bounds Bounds::inflated(double factor) const {
  const Vec3 c = center();
  const Vec3 half = 0.5 * factor * (hi - lo);
  return {c - half, c + half};
}

namespace {

void validate_quat(const Quat& q, int id, const char* side) {
  if (!q.is_finite() || std::abs(q.norm() - 1.0) > 1e-6) {
    throw ValidationError(std::string(side) + " object " + std::to_string(id) +
                          ": quaternion is not unit norm");
  }
}

Bounds bounds_of(const std::vector<ObjectPose>& objs) {
  Bounds b{objs.front().pose.x, objs.front().pose.x};
  for (const auto& o : objs) {
    b.lo = b.lo.cwiseMin(o.pose.x);
    b.hi = b.hi.cwiseMax(o.pose.x);
  }
  return b;
}

}  // namespace

Correspondence::Correspondence(std::vector<ObjectPose> local, std::vector<ObjectPose> remote)
    : local_(std::move(local)), remote_(std::move(remote)) {
  if (local_.size() != remote_.size()) {
    throw ValidationError("local and remote object counts differ (" + std::to_string(local_.size()) +
                          " vs " + std::to_string(remote_.size()) + ")");
  }
  if (local_.size() < 2) {
    throw ValidationError("at least 2 object pairs are required, got " + std::to_string(local_.size()));
  }
  for (auto* side : {&local_, &remote_}) {
    const char* name = side == &local_ ? "local" : "remote";
    for (auto& o : *side) {
      if (!o.pose.x.allFinite()) {
        throw ValidationError(std::string(name) + " object " + std::to_string(o.id) + ": non-finite position");
      }
      validate_quat(o.pose.q, o.id, name);
      o.pose.q = o.pose.q.normalized();
    }
  }
  for (std::size_t i = 0; i < local_.size(); ++i) {
    for (std::size_t j = i + 1; j < local_.size(); ++j) {
      if ((local_[i].pose.x - local_[j].pose.x).norm() <= 1e-9) {
        throw ValidationError("local objects " + std::to_string(local_[i].id) + " and " +
                              std::to_string(local_[j].id) + " share a position");
      }
    }
  }
}

std::vector<Vec3> Correspondence::local_positions() const {
  std::vector<Vec3> out;
  for (const auto& o : local_) out.push_back(o.pose.x);
  return out;
}

std::vector<Vec3> Correspondence::remote_positions() const {
  std::vector<Vec3> out;
  for (const auto& o : remote_) out.push_back(o.pose.x);
  return out;
}

std::vector<Quat> Correspondence::local_orientations() const {
  std::vector<Quat> out;
  for (const auto& o : local_) out.push_back(o.pose.q);
  return out;
}

std::vector<Quat> Correspondence::remote_orientations() const {
  std::vector<Quat> out;
  for (const auto& o : remote_) out.push_back(o.pose.q);
  return out;
}

std::vector<RotVec> Correspondence::orientation_offsets() const {
  std::vector<RotVec> out;
  for (std::size_t i = 0; i < size(); ++i) {
    out.push_back(orientation_offset(local_[i].pose.q, remote_[i].pose.q));
  }
  return out;
}

Bounds Correspondence::local_bounds() const { return bounds_of(local_); }
Bounds Correspondence::remote_bounds() const { return bounds_of(remote_); }

double Correspondence::workspace_scale() const {
  const Bounds a = local_bounds(), b = remote_bounds();
  return 0.5 * ((a.hi - a.lo).norm() + (b.hi - b.lo).norm());
}

double position_error(std::span<const Vec3> mapped, std::span<const Vec3> target) {
  if (mapped.size() != target.size() || mapped.empty()) {
    throw ValidationError("position_error: lists must have equal non-zero length");
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < mapped.size(); ++i) sum += (mapped[i] - target[i]).norm();
  return sum / static_cast<double>(mapped.size());
}

double orientation_error(std::span<const Quat> mapped, std::span<const Quat> target) {
  if (mapped.size() != target.size() || mapped.empty()) {
    throw ValidationError("orientation_error: lists must have equal non-zero length");
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < mapped.size(); ++i) sum += quat_distance(mapped[i], target[i]);
  return sum / static_cast<double>(mapped.size());
}

Vec3 json_to_vec3(const json& j, const std::string& what) {
  if (!j.is_array() || j.size() != 3) throw ParseError(what + ": expected an array of 3 numbers");
  Vec3 v;
  for (int i = 0; i < 3; ++i) {
    if (!j[i].is_number()) throw ParseError(what + ": expected an array of 3 numbers");
    v(i) = j[i].get<double>();
  }
  return v;
}

Quat json_to_quat(const json& j, const std::string& what) {
  if (!j.is_array() || j.size() != 4) throw ParseError(what + ": expected [w, x, y, z]");
  Vec4 c;
  for (int i = 0; i < 4; ++i) {
    if (!j[i].is_number()) throw ParseError(what + ": expected [w, x, y, z]");
    c(i) = j[i].get<double>();
  }
  return Quat::from_coeffs(c);
}

json vec3_to_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }
json quat_to_json(const Quat& q) { return json::array({q.w, q.v.x(), q.v.y(), q.v.z()}); }

namespace {

std::vector<ObjectPose> parse_side(const json& doc, const char* key) {
  if (!doc.contains(key) || !doc[key].is_array()) {
    throw ParseError(std::string("scenario: missing array \"") + key + "\"");
  }
  std::vector<ObjectPose> out;
  int index = 0;
  for (const auto& item : doc[key]) {
    ObjectPose o;
    o.id = item.value("id", index);
    const std::string what = std::string(key) + " object " + std::to_string(o.id);
    if (!item.contains("position")) throw ParseError(what + ": missing position");
    o.pose.x = json_to_vec3(item["position"], what + " position");
    o.pose.q = item.contains("quaternion") ? json_to_quat(item["quaternion"], what + " quaternion")
                                           : Quat::identity();
    out.push_back(o);
    ++index;
  }
  return out;
}

}  // namespace

Correspondence load_scenario(std::istream& in) {
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw ParseError(std::string("scenario: ") + e.what());
  }
  if (!doc.is_object()) throw ParseError("scenario: top level must be an object");
  return Correspondence(parse_side(doc, "local"), parse_side(doc, "remote"));
}

Correspondence load_scenario_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open scenario " + path);
  return load_scenario(in);
}

json scenario_to_json(const Correspondence& corr) {
  json doc;
  for (auto [key, side] : {std::pair{"local", &corr.local()}, std::pair{"remote", &corr.remote()}}) {
    json arr = json::array();
    for (const auto& o : *side) {
      arr.push_back({{"id", o.id}, {"position", vec3_to_json(o.pose.x)}, {"quaternion", quat_to_json(o.pose.q)}});
    }
    doc[key] = arr;
  }
  return doc;
}

}  // namespace bimap
