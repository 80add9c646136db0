#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>

#include "cxlmem/emulator.hpp"
#include "cxlmem/supervisor.hpp"
#include "cxlmem/topology.hpp"

namespace cxlmem {

inline constexpr std::string_view kProfileFormat = "cxlmem.profile";
inline constexpr int kProfileFormatVersion = 1;

/// Writes a profile as JSON lines: a header record, then one record per
/// sample and phase mark in time order, then a footer. The header carries
/// `machine` (node count, per-node free memory, page size) when given.
void write_profile(std::ostream& out, const Profile& profile, const Topology* machine = nullptr);

/// Throws Error(ParseError) naming the offending line.
Profile read_profile(std::istream& in);

/// Refuses to replace an existing file unless `overwrite` is set.
void save_profile(const std::filesystem::path& path, const Profile& profile,
                  const Topology* machine, bool overwrite);
Profile load_profile(const std::filesystem::path& path);

std::string topology_to_json(const Topology& topo);

std::string composition_to_json(const Composition& c);
/// Accepts the object written by composition_to_json; omitted fields keep
/// their defaults. Throws ParseError or InvalidArgument.
Composition composition_from_json(std::string_view text);

/// Writes `contents` to `path`, creating parent directories. Throws
/// InvalidArgument when the file exists and `overwrite` is false.
void write_output_file(const std::filesystem::path& path, std::string_view contents,
                       bool overwrite);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace cxlmem
