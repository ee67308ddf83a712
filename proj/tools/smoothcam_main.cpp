#include <iostream>

#include "smoothcam/cli.hpp"

#ifndef SMOOTHCAM_CORRUPT_GRADIENT
#define SMOOTHCAM_CORRUPT_GRADIENT 0
#endif

int main(int argc, char** argv) {
    smoothcam::cli::BuildOptions build;
    build.corrupt_gradient = SMOOTHCAM_CORRUPT_GRADIENT != 0;
    return smoothcam::cli::run(argc, argv, std::cout, std::cerr, build);
}
