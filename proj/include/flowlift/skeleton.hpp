#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

namespace flowlift {

/// Kinematic tree with a left/right mirror map.
///
/// Edges are stored as given, but parent/child orientation is always derived
/// from the root, so `edge a b` and `edge b a` describe the same skeleton.
/// The mirror map is an involution and must fix the root.
class Skeleton {
 public:
  using Edge = std::pair<int, int>;

  /// Validates and builds. Throws kInvalidArgument when the edges do not form
  /// a spanning tree, or the mirror map is not an involution fixing the root.
  static Skeleton create(std::size_t joint_count, std::vector<Edge> edges, int root,
                         std::vector<int> mirror);

  /// 17-joint human topology (pelvis root, legs, spine, head, arms).
  static Skeleton human17();
  /// 26-joint quadruped topology.
  static Skeleton animal26();

  /// Text format, one directive per line: `J <count>`, `edge <a> <b>`,
  /// `mirror <a> <b>`, `root <r>`. Blank lines and `#` comments are ignored;
  /// joints without a mirror directive map to themselves.
  static Skeleton parse(std::istream& is);
  static Skeleton load(const std::filesystem::path& path);
  std::string to_text() const;

  std::size_t joint_count() const noexcept { return joint_count_; }
  const std::vector<Edge>& edges() const noexcept { return edges_; }
  int root() const noexcept { return root_; }
  const std::vector<int>& mirror() const noexcept { return mirror_; }
  /// Parent of each joint; -1 for the root.
  const std::vector<int>& parents() const noexcept { return parents_; }
  /// Joints in breadth-first order from the root (parents precede children).
  const std::vector<int>& order() const noexcept { return order_; }

  friend bool operator==(const Skeleton& a, const Skeleton& b) {
    return a.joint_count_ == b.joint_count_ && a.edges_ == b.edges_ && a.root_ == b.root_ &&
           a.mirror_ == b.mirror_;
  }

 private:
  std::size_t joint_count_ = 0;
  std::vector<Edge> edges_;
  int root_ = 0;
  std::vector<int> mirror_;
  std::vector<int> parents_;
  std::vector<int> order_;
};

}  // namespace flowlift
