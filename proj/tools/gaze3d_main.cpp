#include "gaze3d/cli.hpp"

int main(int argc, char** argv) { return gaze3d::run_cli(argc, argv); }
