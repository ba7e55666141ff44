#pragma once

#include <stdexcept>
#include <string>

namespace mvanon {

// Base class for all library errors.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// geometry
struct BehindCamera : Error {
    explicit BehindCamera(const std::string& w = "point is behind the camera") : Error(w) {}
};
struct InvalidDepth : Error {
    explicit InvalidDepth(const std::string& w = "depth value is missing or non-positive") : Error(w) {}
};
struct InsufficientViews : Error {
    explicit InsufficientViews(const std::string& w = "too few views for triangulation") : Error(w) {}
};
struct DegenerateGeometry : Error {
    explicit DegenerateGeometry(const std::string& w = "degenerate observation geometry") : Error(w) {}
};
struct TooFewPoints : Error {
    explicit TooFewPoints(const std::string& w = "too few points") : Error(w) {}
};
struct DegenerateConfiguration : Error {
    explicit DegenerateConfiguration(const std::string& w = "degenerate point configuration") : Error(w) {}
};

// pointcloud
struct AttributeMismatch : Error {
    explicit AttributeMismatch(const std::string& w = "point cloud attribute mismatch") : Error(w) {}
};

// registration
struct EmptyInput : Error {
    explicit EmptyInput(const std::string& w = "empty input cloud") : Error(w) {}
};
struct MissingNormals : Error {
    explicit MissingNormals(const std::string& w = "target cloud has no normals") : Error(w) {}
};

// pose
struct InsufficientHeadJoints : Error {
    explicit InsufficientHeadJoints(const std::string& w = "not enough valid head joints") : Error(w) {}
};

// facemesh
struct TooFewLandmarks : Error {
    explicit TooFewLandmarks(const std::string& w = "too few landmark correspondences") : Error(w) {}
};
struct MissingFaceSubmesh : Error {
    explicit MissingFaceSubmesh(const std::string& w = "template has no face submesh") : Error(w) {}
};

// eval
struct DimensionMismatch : Error {
    explicit DimensionMismatch(const std::string& w = "image dimensions differ") : Error(w) {}
};
struct TooSmall : Error {
    explicit TooSmall(const std::string& w = "image smaller than window") : Error(w) {}
};

// io / cli
struct ParseError : Error {
    explicit ParseError(const std::string& w = "parse error") : Error(w) {}
};
struct ConfigInvalid : Error {
    explicit ConfigInvalid(const std::string& w = "invalid pipeline configuration") : Error(w) {}
};
struct SpecInvalid : Error {
    explicit SpecInvalid(const std::string& w = "invalid synthetic scene spec") : Error(w) {}
};
struct IoError : Error {
    explicit IoError(const std::string& w = "file i/o error") : Error(w) {}
};

}  // namespace mvanon
