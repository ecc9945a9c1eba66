package org.demo;

import java.util.List;

public class Shapes {
    private static final double PI = Math.PI;

    public Shapes() { }

    // circle
    public double area(double r) {
        return PI * r * r;
    }

    public double area(double w, double h) {
        return w * h;
    }

    public void scale(double[] factors, List<Double> out) {
        for (double f : factors) out.add(f * 2);
    }

    public java.util.Comparator<Point> order() {
        return new java.util.Comparator<Point>() {
            public int compare(Point a, Point b) { return a.x - b.x; }
        };
    }

    public String describe() {
        return "shapes";
    }

    static class Point {
        final int x;
        final int y;

        Point(int x, int y) {
            this.x = x;
            this.y = y;
        }
    }
}
