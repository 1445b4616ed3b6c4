#pragma once

#include <json.hpp>

#include <filesystem>
#include <optional>
#include <string>

#include "msb/drift.hpp"
#include "msb/errors.hpp"
#include "msb/io.hpp"

namespace msb {

/// A drift snapshot plus what is needed to use it safely later.
struct Checkpoint {
  std::size_t outer = 0;
  double sigma_min = 1.0;
  double sigma_max = 1.0;
  DriftModel drift;
};

inline constexpr int kCheckpointVersion = 1;

/// Writes <dir>/checkpoint.json; neural weights go next to it as <sha>.msbw.
inline void write_checkpoint(const std::filesystem::path& dir, const Checkpoint& ck) {
  std::filesystem::create_directories(dir);
  nlohmann::json doc = {{"format", "msb-checkpoint"},  {"version", kCheckpointVersion},
                        {"outer", ck.outer},           {"sigma_min", ck.sigma_min},
                        {"sigma_max", ck.sigma_max},   {"drift", drift_to_json(ck.drift, dir)}};
  io::write_text(dir / "checkpoint.json", doc.dump(2) + "\n");
}

/// Accepts the checkpoint directory or its checkpoint.json.
inline Checkpoint read_checkpoint(const std::filesystem::path& where) {
  const auto file = std::filesystem::is_directory(where) ? where / "checkpoint.json" : where;
  if (!std::filesystem::exists(file)) throw IntegrityError("checkpoint not found: " + file.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(io::read_text(file));
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError("unreadable checkpoint " + file.string() + ": " + e.what());
  }
  try {
    if (doc.at("format") != "msb-checkpoint" || doc.at("version") != kCheckpointVersion)
      throw IntegrityError("unsupported checkpoint format in " + file.string());
    return {doc.at("outer").get<std::size_t>(), doc.at("sigma_min").get<double>(), doc.at("sigma_max").get<double>(),
            drift_from_json(doc.at("drift"), file.parent_path())};
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError("malformed checkpoint " + file.string() + ": " + e.what());
  } catch (const InvalidArgument& e) {
    throw IntegrityError("malformed checkpoint " + file.string() + ": " + e.what());
  }
}

}  // namespace msb
