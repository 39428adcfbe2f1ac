#include "flowlift/skeleton.hpp"

#include <fstream>
#include <queue>
#include <sstream>

#include "flowlift/error.hpp"

namespace flowlift {

Skeleton Skeleton::create(std::size_t joint_count, std::vector<Edge> edges, int root,
                          std::vector<int> mirror) {
  const auto n = static_cast<int>(joint_count);
  require(joint_count >= 1, ErrorCode::kInvalidArgument, "skeleton needs at least one joint");
  require(root >= 0 && root < n, ErrorCode::kInvalidArgument, "root index out of range");
  require(edges.size() == joint_count - 1, ErrorCode::kInvalidArgument,
          "a tree over " + std::to_string(joint_count) + " joints needs " +
              std::to_string(joint_count - 1) + " edges, got " + std::to_string(edges.size()));

  std::vector<std::vector<int>> adjacency(joint_count);
  for (const auto& [a, b] : edges) {
    require(a >= 0 && a < n && b >= 0 && b < n && a != b, ErrorCode::kInvalidArgument,
            "edge (" + std::to_string(a) + "," + std::to_string(b) + ") is invalid");
    adjacency[static_cast<std::size_t>(a)].push_back(b);
    adjacency[static_cast<std::size_t>(b)].push_back(a);
  }

  Skeleton s;
  s.joint_count_ = joint_count;
  s.root_ = root;
  s.parents_.assign(joint_count, -2);
  s.parents_[static_cast<std::size_t>(root)] = -1;
  std::queue<int> frontier;
  frontier.push(root);
  while (!frontier.empty()) {
    const int j = frontier.front();
    frontier.pop();
    s.order_.push_back(j);
    for (int k : adjacency[static_cast<std::size_t>(j)]) {
      if (k == s.parents_[static_cast<std::size_t>(j)]) continue;
      require(s.parents_[static_cast<std::size_t>(k)] == -2, ErrorCode::kInvalidArgument,
              "edges contain a cycle or a duplicate");
      s.parents_[static_cast<std::size_t>(k)] = j;
      frontier.push(k);
    }
  }
  require(s.order_.size() == joint_count, ErrorCode::kInvalidArgument,
          "edges do not connect all joints");

  if (mirror.empty()) {
    mirror.resize(joint_count);
    for (int j = 0; j < n; ++j) mirror[static_cast<std::size_t>(j)] = j;
  }
  require(mirror.size() == joint_count, ErrorCode::kInvalidArgument, "mirror map has wrong length");
  for (int j = 0; j < n; ++j) {
    const int m = mirror[static_cast<std::size_t>(j)];
    require(m >= 0 && m < n && mirror[static_cast<std::size_t>(m)] == j, ErrorCode::kInvalidArgument,
            "mirror map is not an involution at joint " + std::to_string(j));
  }
  require(mirror[static_cast<std::size_t>(root)] == root, ErrorCode::kInvalidArgument,
          "root must be its own mirror");
  s.edges_ = std::move(edges);
  s.mirror_ = std::move(mirror);
  return s;
}

Skeleton Skeleton::human17() {
  // 0 pelvis, 1-3 right leg, 4-6 left leg, 7 spine, 8 thorax, 9 neck, 10 head,
  // 11-13 left arm, 14-16 right arm.
  std::vector<Edge> edges = {{0, 1},  {1, 2},  {2, 3},   {0, 4},   {4, 5},   {5, 6},
                             {0, 7},  {7, 8},  {8, 9},   {9, 10},  {8, 11},  {11, 12},
                             {12, 13}, {8, 14}, {14, 15}, {15, 16}};
  std::vector<int> mirror = {0, 4, 5, 6, 1, 2, 3, 7, 8, 9, 10, 14, 15, 16, 11, 12, 13};
  return create(17, std::move(edges), 0, std::move(mirror));
}

Skeleton Skeleton::animal26() {
  // 0 mid-spine, 1 front spine, 2 neck, 3 head, 4 nose, 5/6 ears, 7 rear spine,
  // 8-9 tail, 10-13 front-left leg, 14-17 front-right, 18-21 hind-left, 22-25 hind-right.
  std::vector<Edge> edges = {{0, 1},   {1, 2},   {2, 3},   {3, 4},   {3, 5},
                             {3, 6},   {0, 7},   {7, 8},   {8, 9},   {1, 10},
                             {10, 11}, {11, 12}, {12, 13}, {1, 14},  {14, 15},
                             {15, 16}, {16, 17}, {7, 18},  {18, 19}, {19, 20},
                             {20, 21}, {7, 22},  {22, 23}, {23, 24}, {24, 25}};
  std::vector<int> mirror(26);
  for (int j = 0; j < 26; ++j) mirror[static_cast<std::size_t>(j)] = j;
  auto pair = [&](int a, int b) {
    mirror[static_cast<std::size_t>(a)] = b;
    mirror[static_cast<std::size_t>(b)] = a;
  };
  pair(5, 6);
  for (int k = 0; k < 4; ++k) {
    pair(10 + k, 14 + k);
    pair(18 + k, 22 + k);
  }
  return create(26, std::move(edges), 0, std::move(mirror));
}

Skeleton Skeleton::parse(std::istream& is) {
  std::size_t count = 0;
  bool have_count = false;
  int root = 0;
  std::vector<Edge> edges;
  std::vector<Edge> mirror_pairs;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::string key;
    if (!(ls >> key)) continue;
    auto fail = [&] {
      throw Error(ErrorCode::kInvalidArgument,
                  "skeleton line " + std::to_string(line_no) + ": cannot parse '" + line + "'");
    };
    if (key == "J") {
      long long v = 0;
      if (!(ls >> v) || v < 1) fail();
      count = static_cast<std::size_t>(v);
      have_count = true;
    } else if (key == "edge" || key == "mirror") {
      int a = 0, b = 0;
      if (!(ls >> a >> b)) fail();
      (key == "edge" ? edges : mirror_pairs).emplace_back(a, b);
    } else if (key == "root") {
      if (!(ls >> root)) fail();
    } else {
      fail();
    }
    std::string extra;
    if (ls >> extra) fail();
  }
  require(have_count, ErrorCode::kInvalidArgument, "skeleton file lacks a 'J <count>' line");
  std::vector<int> mirror(count);
  for (std::size_t j = 0; j < count; ++j) mirror[j] = static_cast<int>(j);
  for (const auto& [a, b] : mirror_pairs) {
    require(a >= 0 && b >= 0 && static_cast<std::size_t>(a) < count &&
                static_cast<std::size_t>(b) < count,
            ErrorCode::kInvalidArgument, "mirror pair out of range");
    mirror[static_cast<std::size_t>(a)] = b;
    mirror[static_cast<std::size_t>(b)] = a;
  }
  return create(count, std::move(edges), root, std::move(mirror));
}

Skeleton Skeleton::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  require(is.is_open(), ErrorCode::kIo, "cannot open skeleton file '" + path.string() + "'");
  return parse(is);
}

std::string Skeleton::to_text() const {
  std::ostringstream os;
  os << "J " << joint_count_ << '\n' << "root " << root_ << '\n';
  for (const auto& [a, b] : edges_) os << "edge " << a << ' ' << b << '\n';
  for (std::size_t j = 0; j < mirror_.size(); ++j)
    if (static_cast<int>(j) < mirror_[j]) os << "mirror " << j << ' ' << mirror_[j] << '\n';
  return os.str();
}

}  // namespace flowlift
